use super::{arch_err, validate, ArchSpec, SplitLayerSpec, Variant};
use crate::error::Result;
use crate::nn::LayerKind;

#[derive(Clone, Copy, Debug)]
enum Widths {
    Single(usize),
    Pair(usize, usize),
}

#[derive(Clone, Debug)]
struct RawLayer {
    token: String,
    kind: LayerKind,
    widths: Option<Widths>,
    s1_only: bool,
}

/// Parse the textual notation into a validated [`ArchSpec`].
///
/// The variant is taken from a leading `@monolithic` / `@sharing` /
/// `@non-sharing` directive when present, otherwise it is `Sharing` if any
/// conv uses the `a/b` pair form and `Monolithic` if none does.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let cleaned: String = text
        .lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join(",");

    let mut pieces = split_top_level(&cleaned)?;
    let mut directive = None;
    if let Some(first) = pieces.first() {
        if let Some(name) = first.strip_prefix('@') {
            directive = Some(
                name.parse::<Variant>()
                    .map_err(|_| arch_err(first, "unknown variant directive"))?,
            );
            pieces.remove(0);
        }
    }

    let mut raw = Vec::new();
    for piece in &pieces {
        expand(piece, &mut raw)?;
    }
    if raw.is_empty() {
        return Err(arch_err(text.trim(), "empty architecture"));
    }

    let any_pair = raw.iter().any(|r| matches!(r.widths, Some(Widths::Pair(..))));
    let variant = directive.unwrap_or(if any_pair {
        Variant::Sharing
    } else {
        Variant::Monolithic
    });

    let mut layers = Vec::with_capacity(raw.len());
    let mut names = Vec::with_capacity(raw.len());
    for r in raw {
        let (n_s1, n_s2) = match (r.widths, variant) {
            (None, _) => (0, 0),
            (Some(Widths::Single(n)), Variant::Monolithic) => (0, n),
            (Some(Widths::Single(n)), _) => (n, 0),
            (Some(Widths::Pair(..)), Variant::Monolithic) => {
                return Err(arch_err(&r.token, "monolithic spec cannot contain a stage pair"))
            }
            (Some(Widths::Pair(a, b)), _) => (a, b),
        };
        layers.push(SplitLayerSpec {
            kind: r.kind,
            n_s1,
            n_s2,
            s1_only: r.s1_only,
        });
        names.push(r.token);
    }
    validate(&layers, variant, &names)?;
    Ok(ArchSpec::from_validated(layers, variant))
}

/// Split on commas that are not nested inside `(…)` or `[…]`.
fn split_top_level(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err(arch_err(text.trim(), "unbalanced brackets"));
        }
        if ch == ',' && depth == 0 {
            push_piece(&mut out, &cur);
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    if depth != 0 {
        return Err(arch_err(text.trim(), "unbalanced brackets"));
    }
    push_piece(&mut out, &cur);
    Ok(out)
}

fn push_piece(out: &mut Vec<String>, piece: &str) {
    let p: String = piece.split_whitespace().collect();
    if !p.is_empty() {
        out.push(p);
    }
}

fn expand(piece: &str, out: &mut Vec<RawLayer>) -> Result<()> {
    let digits: String = piece.chars().take_while(|c| c.is_ascii_digit()).collect();
    if !digits.is_empty() {
        let rest = &piece[digits.len()..];
        let body = rest
            .strip_prefix('x')
            .or_else(|| rest.strip_prefix('×'))
            .or_else(|| rest.strip_prefix('X'))
            .ok_or_else(|| arch_err(piece, "expected `x` after a repetition count"))?;
        let count: usize = digits
            .parse()
            .map_err(|_| arch_err(piece, "repetition count too large"))?;
        if count == 0 {
            return Err(arch_err(piece, "repetition count must be at least 1"));
        }
        let mut once = Vec::new();
        if let Some(inner) = body.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| arch_err(piece, "unterminated group"))?;
            for p in split_top_level(inner)? {
                expand(&p, &mut once)?;
            }
        } else {
            once.push(parse_token(body)?);
        }
        for _ in 0..count {
            out.extend(once.iter().cloned());
        }
        return Ok(());
    }
    out.push(parse_token(piece)?);
    Ok(())
}

/// Reads a decimal number at the start of `s`.
fn number(s: &str) -> Option<(usize, &str)> {
    let len = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if len == 0 {
        return None;
    }
    Some((s[..len].parse().ok()?, &s[len..]))
}

fn parse_token(tok: &str) -> Result<RawLayer> {
    let bad = |reason: &str| arch_err(tok, reason);
    let mut chars = tok.chars();
    let head = chars.next().ok_or_else(|| bad("empty token"))?;
    let rest = chars.as_str();
    match head {
        'R' if rest.is_empty() => Ok(RawLayer {
            token: tok.into(),
            kind: LayerKind::Relu,
            widths: None,
            s1_only: false,
        }),
        'P' => {
            let (window, mut rest) = number(rest).ok_or_else(|| bad("expected a pool window"))?;
            let mut stride = window;
            if let Some(r) = rest.strip_prefix('s') {
                let (st, r) = number(r).ok_or_else(|| bad("expected a stride after `s`"))?;
                stride = st;
                rest = r;
            }
            let s1_only = match rest {
                "" => false,
                "@S1" | "@s1" => true,
                _ => return Err(bad("unexpected trailing characters")),
            };
            Ok(RawLayer {
                token: tok.into(),
                kind: LayerKind::MaxPool { window, stride },
                widths: None,
                s1_only,
            })
        }
        'C' | 'B' => {
            let (size, rest) = number(rest).ok_or_else(|| bad("expected a filter size"))?;
            let inner_and_rest = rest
                .strip_prefix('(')
                .ok_or_else(|| bad("expected `(` after the filter size"))?;
            let close = inner_and_rest
                .find(')')
                .ok_or_else(|| bad("missing `)`"))?;
            let widths = parse_widths(&inner_and_rest[..close]).ok_or_else(|| bad("malformed widths"))?;
            let (mut pad, mut stride) = (None, None);
            let mut mods = &inner_and_rest[close + 1..];
            while !mods.is_empty() {
                let (slot, r) = if let Some(r) = mods.strip_prefix('s') {
                    (&mut stride, r)
                } else if let Some(r) = mods.strip_prefix('p') {
                    (&mut pad, r)
                } else {
                    return Err(bad("unknown modifier (expected `s<stride>` or `p<pad>`)"));
                };
                if slot.is_some() {
                    return Err(bad("modifier given twice"));
                }
                let (v, r) = number(r).ok_or_else(|| bad("modifier needs a number"))?;
                *slot = Some(v);
                mods = r;
            }
            let stride = stride.unwrap_or(1);
            let kind = if head == 'C' {
                LayerKind::Conv {
                    size,
                    pad: pad.unwrap_or(0),
                    stride,
                }
            } else {
                if pad.is_some() {
                    return Err(bad("residual blocks always use same padding"));
                }
                LayerKind::Residual { size, stride }
            };
            if let Widths::Pair(0, 0) | Widths::Single(0) = widths {
                return Err(bad("zero-width pair"));
            }
            Ok(RawLayer {
                token: tok.into(),
                kind,
                widths: Some(widths),
                s1_only: false,
            })
        }
        _ => Err(bad("unknown token")),
    }
}

fn parse_widths(inner: &str) -> Option<Widths> {
    let one = |s: &str| -> Option<usize> {
        if s == "-" {
            Some(0)
        } else {
            let (n, r) = number(s)?;
            r.is_empty().then_some(n)
        }
    };
    match inner.split_once('/') {
        Some((a, b)) => Some(Widths::Pair(one(a)?, one(b)?)),
        None if inner != "-" => Some(Widths::Single(one(inner)?)),
        None => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_pairs() {
        let spec = parse_arch("C11(8/56), C5(32/224)").unwrap();
        assert_eq!(spec.variant, Variant::Sharing);
        let c = spec.conv_levels();
        assert_eq!((c[0].spec.n_s1, c[0].spec.n_s2), (8, 56));
        assert_eq!((c[1].spec.n_s1, c[1].spec.n_s2), (32, 224));
        assert_eq!(c[0].spec.filter_size(), Some(11));
    }

    #[test]
    fn single_width_monolithic() {
        let spec = parse_arch("C3(4)").unwrap();
        assert_eq!(spec.variant, Variant::Monolithic);
        assert_eq!(spec.layers.len(), 1);
        assert_eq!((spec.layers[0].n_s1, spec.layers[0].n_s2), (0, 4));
    }

    #[test]
    fn repetition_expands() {
        let spec = parse_arch("3xC3(64/192)").unwrap();
        assert_eq!(spec.layers.len(), 3);
        assert!(spec.layers.iter().all(|l| (l.n_s1, l.n_s2) == (64, 192)));
        let uni = parse_arch("3×C3(64/192)").unwrap();
        assert_eq!(uni, spec);
    }

    #[test]
    fn grouped_repetition_and_modifiers() {
        let spec = parse_arch("2x[C3(2/4)p1, R], P3s2, C5(1/1)s2").unwrap();
        assert_eq!(
            spec.canonical(),
            "C3(2/4)p1, R, C3(2/4)p1, R, P3s2, C5(1/1)s2"
        );
    }

    #[test]
    fn comments_and_newlines() {
        let spec = parse_arch("# stage pair\nC3(2/3)p1\nR # relu\nC3(2/3)").unwrap();
        assert_eq!(spec.depth(), 2);
    }

    #[test]
    fn errors_name_the_token() {
        let err = parse_arch("C3(2/3), Q7").unwrap_err();
        assert!(err.to_string().contains("Q7"), "{err}");
        let err = parse_arch("C3(-/-)").unwrap_err();
        assert!(err.to_string().contains("zero-width"), "{err}");
        let err = parse_arch("C3(2/3), C3(-/3), C3(2/3)").unwrap_err();
        assert!(err.to_string().contains("C3(2/3)") && err.to_string().contains("S1"), "{err}");
        let err = parse_arch("C3(2/3), C3(2/-), C3(2/3)").unwrap_err();
        assert!(err.to_string().contains("non-contiguous S2"), "{err}");
        assert!(parse_arch("C3(2/3").is_err());
        assert!(parse_arch("C3(2/3)q1").is_err());
        assert!(parse_arch("0xC3(2)").is_err());
        assert!(parse_arch("").is_err());
    }

    #[test]
    fn s1_only_pool_placement() {
        assert!(parse_arch("C3(4/-), P2@S1, C3(2/4), C1(-/3)").is_ok());
        let err = parse_arch("P2@S1, C3(4/-), C3(2/4), C1(-/3)").unwrap_err();
        assert!(err.to_string().contains("P2@S1"));
    }

    #[test]
    fn directive_sets_variant() {
        let spec = parse_arch("@non-sharing, C3(2/3)").unwrap();
        assert_eq!(spec.variant, Variant::NonSharing);
        assert_eq!(parse_arch(&spec.canonical()).unwrap(), spec);
        assert!(parse_arch("@monolithic, C3(2/3)").is_err());
    }

    #[test]
    fn gap_between_stages_is_rejected() {
        let err = parse_arch("C3(4/-), C3(-/-), C3(-/4)").unwrap_err();
        assert!(err.to_string().contains("zero-width"));
        let err = parse_arch("C3(4/-), P2@S1, C3(4/-), C3(-/4), C3(-/4)");
        assert!(err.is_ok());
    }
}
