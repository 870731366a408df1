use crate::arch::ArchSpec;
use crate::calibration::{cluster_classes, ClassPartition};
use crate::cascade::{fit, CascadeModel, FitConfig};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Groups S2 classes into the S1 classes of `spec`.
///
/// With as many S1 as S2 classes the grouping is the identity. Otherwise the
/// background (class 0) keeps its own group and the remaining classes are
/// clustered by k-means on the class-mean penultimate activations of the
/// monolithic network, trained with `pretrain` first.
pub fn derive_s1_groups<T: Scalar>(
    spec: &ArchSpec,
    images: &Tensor<T>,
    s2_labels: &[usize],
    pretrain: &FitConfig,
    seed: u64,
) -> Result<ClassPartition> {
    let (k, classes) = (spec.s1_class_count, spec.s2_class_count);
    if k == classes {
        return Ok(ClassPartition::identity(classes));
    }
    if k < 2 || k > classes {
        return Err(invalid(format!(
            "cannot group {classes} S2 classes into {k} S1 classes (need 2 ≤ K ≤ {classes})"
        )));
    }
    let mono = spec.derive_variants()?.monolithic;
    let mut model = CascadeModel::<T>::build(&mono, images.shape()[1], seed)?;
    fit(&mut model, images, &[], s2_labels, pretrain, |_| {})?;
    let means = model.class_mean_activations(images, s2_labels, classes, 256)?;
    let fg: Vec<usize> = (1..classes).collect();
    let fg_means = means.select_rows(&fg)?;
    let part = cluster_classes(&fg_means, k - 1, seed)?;
    let mut assignment = vec![0];
    assignment.extend(part.assignment.iter().map(|g| g + 1));
    Ok(ClassPartition { assignment, k })
}
