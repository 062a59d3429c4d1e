//! Latent extraction, site arithmetic, PCA condensation, and demographic
//! fusion.
//!
//! Fused-vector layout (fixed; re-derive nothing at read time):
//!
//! | index      | content            |
//! |------------|--------------------|
//! | 0..dim     | condensed latent   |
//! | dim + 0    | gender_male        |
//! | dim + 1    | gender_female      |
//! | dim + 2    | log1p(age)         |
//! | dim + 3    | htn_yes            |
//! | dim + 4    | htn_no             |
//! | dim + 5    | dm_yes             |
//! | dim + 6    | dm_no              |

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::augment::NoiseKind;
use crate::error::{Error, Result};
use crate::nnet::{Autoencoder, TrainScheme};
use crate::signal_io::{Gender, PatientRecord, Site};

/// Number of encoded demographic columns appended by fusion.
pub const DEMOGRAPHIC_WIDTH: usize = 7;

/// Which variant of a recording a latent came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantTag {
    Clean,
    Noisy { kind: NoiseKind, snr_index: u8 },
}

impl VariantTag {
    pub fn label(&self) -> String {
        match self {
            VariantTag::Clean => "clean".into(),
            VariantTag::Noisy { kind, snr_index } => {
                format!("{}-snr{}", kind.name(), snr_index)
            }
        }
    }
}

/// Site origin of a latent: a single site or a two-site combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteTag {
    Single(Site),
    Combined(CombineOp),
}

impl SiteTag {
    pub fn label(&self) -> String {
        match self {
            SiteTag::Single(site) => site.to_string(),
            SiteTag::Combined(op) => format!("site2{}3", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineOp {
    Subtract,
    Concat,
    Add,
}

impl CombineOp {
    fn symbol(&self) -> &'static str {
        match self {
            CombineOp::Subtract => "-",
            CombineOp::Concat => "+cat+",
            CombineOp::Add => "+",
        }
    }
}

/// Where a latent vector came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub patient_id: String,
    pub site: SiteTag,
    pub level: u8,
    pub scheme: TrainScheme,
    pub variant: VariantTag,
}

/// Encoder bottleneck output (optionally condensed or fused).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One model-ready feature with identity, for latent extraction.
pub struct FeatureItem {
    pub patient_id: String,
    pub site: Site,
    pub variant: VariantTag,
    /// Flattened model input (row-major channels x time for conv).
    pub values: Vec<f32>,
}

/// Encode a batch of features into latent vectors with provenance.
pub fn extract_latents(
    model: &Autoencoder<f32>,
    items: &[FeatureItem],
    level: u8,
    scheme: TrainScheme,
) -> Result<Vec<LatentVector>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(CHUNK) {
        let latents = match model {
            Autoencoder::Dense(m) => {
                let width = m.input_width;
                let mut x = Array2::<f32>::zeros((chunk.len(), width));
                for (r, item) in chunk.iter().enumerate() {
                    if item.values.len() != width {
                        return Err(Error::data(format!(
                            "feature width {} != model width {width} for patient {}",
                            item.values.len(),
                            item.patient_id
                        )));
                    }
                    for (c, &v) in item.values.iter().enumerate() {
                        x[(r, c)] = v;
                    }
                }
                m.encode_batch(&x)?
            }
            Autoencoder::Conv(m) => {
                let (ch, t) = (m.in_channels, m.input_len);
                let mut x = Array3::<f32>::zeros((chunk.len(), ch, t));
                for (r, item) in chunk.iter().enumerate() {
                    if item.values.len() != ch * t {
                        return Err(Error::data(format!(
                            "feature size {} != model size {} for patient {}",
                            item.values.len(),
                            ch * t,
                            item.patient_id
                        )));
                    }
                    for ci in 0..ch {
                        for ti in 0..t {
                            x[(r, ci, ti)] = item.values[ci * t + ti];
                        }
                    }
                }
                m.encode_batch(&x)?
            }
        };
        for (r, item) in chunk.iter().enumerate() {
            out.push(LatentVector {
                values: latents.row(r).iter().map(|&v| v as f64).collect(),
                provenance: Provenance {
                    patient_id: item.patient_id.clone(),
                    site: SiteTag::Single(item.site),
                    level,
                    scheme,
                    variant: item.variant,
                },
            });
        }
    }
    Ok(out)
}

/// Combine the two puncture-site latents of one patient/variant.
pub fn combine_sites(
    l2: &LatentVector,
    l3: &LatentVector,
    op: CombineOp,
) -> Result<LatentVector> {
    if l2.provenance.patient_id != l3.provenance.patient_id {
        return Err(Error::data(format!(
            "combine_sites across patients {} and {}",
            l2.provenance.patient_id, l3.provenance.patient_id
        )));
    }
    if l2.provenance.variant != l3.provenance.variant {
        return Err(Error::data("combine_sites across mismatched noise variants"));
    }
    if l2.provenance.site != SiteTag::Single(Site::Arterial)
        || l3.provenance.site != SiteTag::Single(Site::Venous)
    {
        return Err(Error::data("combine_sites expects (site2, site3) inputs"));
    }
    if op != CombineOp::Concat && l2.dim() != l3.dim() {
        return Err(Error::data(format!(
            "latent dims differ: {} vs {}",
            l2.dim(),
            l3.dim()
        )));
    }
    let values = match op {
        CombineOp::Subtract => l2
            .values
            .iter()
            .zip(&l3.values)
            .map(|(a, b)| a - b)
            .collect(),
        CombineOp::Add => l2
            .values
            .iter()
            .zip(&l3.values)
            .map(|(a, b)| a + b)
            .collect(),
        CombineOp::Concat => {
            let mut v = l2.values.clone();
            v.extend_from_slice(&l3.values);
            v
        }
    };
    Ok(LatentVector {
        values,
        provenance: Provenance {
            site: SiteTag::Combined(op),
            ..l2.provenance.clone()
        },
    })
}

/// PCA fit on mean-centered data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// (dim_out x dim_in), rows orthonormal, sorted by eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[(i, i)]).collect();
    (eigenvalues, v)
}

/// Fit PCA on rows of `data`, keeping the top `dim_out` components.
pub fn pca_fit(data: &Array2<f64>, dim_out: usize) -> Result<PcaModel> {
    let n = data.nrows();
    let d = data.ncols();
    if n <= dim_out {
        return Err(Error::data(format!(
            "pca needs more than {dim_out} samples, got {n}"
        )));
    }
    if dim_out == 0 || dim_out > d {
        return Err(Error::config(format!(
            "dim_out {dim_out} out of range for {d}-dim data"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|c| data.column(c).sum() / n as f64)
        .collect();
    let mut centered = data.clone();
    for mut row in centered.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v -= mean[c];
        }
    }
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let (eigenvalues, vectors) = jacobi_eigen(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());
    let sorted_eigs: Vec<f64> = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();

    let rank = sorted_eigs
        .iter()
        .filter(|&&e| e > sorted_eigs[0].max(1e-300) * 1e-10)
        .count();
    if rank < dim_out {
        return Err(Error::numeric(format!(
            "degenerate covariance: rank {rank} < requested dim {dim_out}"
        )));
    }

    let total: f64 = sorted_eigs.iter().sum();
    let components: Vec<Vec<f64>> = order[..dim_out]
        .iter()
        .map(|&i| vectors.column(i).to_vec())
        .collect();
    let explained_variance_ratio = sorted_eigs[..dim_out]
        .iter()
        .map(|&e| e / total)
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio,
        eigenvalues: sorted_eigs[..dim_out].to_vec(),
    })
}

impl PcaModel {
    pub fn dim_in(&self) -> usize {
        self.mean.len()
    }

    pub fn dim_out(&self) -> usize {
        self.components.len()
    }

    /// Project a vector onto the retained components.
    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim_in() {
            return Err(Error::data(format!(
                "pca transform dim {} != model dim {}",
                values.len(),
                self.dim_in()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|comp| {
                comp.iter()
                    .zip(values)
                    .zip(&self.mean)
                    .map(|((c, v), m)| c * (v - m))
                    .sum()
            })
            .collect())
    }

    /// Back-project from component space (loses discarded eigen-mass).
    pub fn inverse(&self, projected: &[f64]) -> Result<Vec<f64>> {
        if projected.len() != self.dim_out() {
            return Err(Error::data("pca inverse dim mismatch"));
        }
        let mut out = self.mean.clone();
        for (w, comp) in projected.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += w * c;
            }
        }
        Ok(out)
    }

    /// Condense a latent vector, keeping provenance.
    pub fn condense(&self, latent: &LatentVector) -> Result<LatentVector> {
        Ok(LatentVector {
            values: self.transform(&latent.values)?,
            provenance: latent.provenance.clone(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<PcaModel> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Append one-hot demographics and log1p(age) to a condensed latent.
///
/// Layout per the module table: both levels of each binary variable get a
/// column, age is a single log1p column. Fused dim = condensed + 7.
pub fn fuse_demographics(condensed: &LatentVector, patient: &PatientRecord) -> LatentVector {
    let mut values = condensed.values.clone();
    let (male, female) = match patient.gender {
        Gender::Male => (1.0, 0.0),
        Gender::Female => (0.0, 1.0),
    };
    values.push(male);
    values.push(female);
    values.push((patient.age as f64).ln_1p());
    values.push(if patient.htn { 1.0 } else { 0.0 });
    values.push(if patient.htn { 0.0 } else { 1.0 });
    values.push(if patient.dm { 1.0 } else { 0.0 });
    values.push(if patient.dm { 0.0 } else { 1.0 });
    LatentVector {
        values,
        provenance: condensed.provenance.clone(),
    }
}

/// Human-readable feature names matching `fuse_demographics` order.
pub fn fused_feature_names(condensed_dim: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=condensed_dim).map(|i| format!("S{i}")).collect();
    for n in [
        "gender_male",
        "gender_female",
        "log1p_age",
        "htn_yes",
        "htn_no",
        "dm_yes",
        "dm_no",
    ] {
        names.push(n.to_string());
    }
    names
}

/// Dump latents as CSV: provenance columns then values.
pub fn dump_latents_csv(latents: &[LatentVector], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Error::format(format!("cannot write latents: {e}")))?;
    let dim = latents.first().map(|l| l.dim()).unwrap_or(0);
    let mut header = vec![
        "patient_id".to_string(),
        "site".to_string(),
        "level".to_string(),
        "scheme".to_string(),
        "variant".to_string(),
    ];
    header.extend((0..dim).map(|i| format!("v{i}")));
    wtr.write_record(&header)
        .map_err(|e| Error::format(e.to_string()))?;
    for l in latents {
        let mut record = vec![
            l.provenance.patient_id.clone(),
            l.provenance.site.label(),
            l.provenance.level.to_string(),
            l.provenance.scheme.name().to_string(),
            l.provenance.variant.label(),
        ];
        record.extend(l.values.iter().map(|v| format!("{v}")));
        wtr.write_record(&record)
            .map_err(|e| Error::format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
