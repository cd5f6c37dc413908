//! The offline artifact: derivative tensors plus the metadata needed to
//! detect a mismatch with the model they are applied to.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! "GPDB"                      magic
//! u32                         format version
//! u64 n, u64 t, u64 p
//! f64 amplitude, length_scale, noise_std, jitter
//! [u8; 32]                    SHA-256 of the planned inputs
//! [u8; 32]                    SHA-256 of the measurements
//! u8                          created_with_measurements
//! u8                          has_full_mean_hessian
//! tensor*                     mean jacobian, mean hessian diag,
//!                             [mean hessian full], cov jacobian, cov hessian diag
//! ```
//!
//! Each tensor is `u32 rank`, `u64 dims[rank]`, then row-major f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::derivatives::{assemble, CovDerivatives, MeanDerivatives, DEFAULT_FULL_HESSIAN_LIMIT};
use crate::error::{GpError, Result};
use crate::gp::{InputDigest, QuerySet, TrainedGP};
use crate::kernel::KernelParams;
use crate::tensor::{read_exact, read_f64, read_u32, read_u64, Tensor};

pub const BUNDLE_MAGIC: &[u8; 4] = b"GPDB";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BundleMeta {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub params: KernelParams,
    pub planned_inputs_hash: InputDigest,
    pub measurements_hash: InputDigest,
    pub created_with_measurements: bool,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub meta: BundleMeta,
    pub mean_derivs: MeanDerivatives,
    pub cov_derivs: CovDerivatives,
}

/// Options for [`build_bundle_with`].
#[derive(Debug, Clone, Copy)]
pub struct BundleOptions {
    pub include_full_mean_hessian: bool,
    pub full_hessian_limit: usize,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            include_full_mean_hessian: false,
            full_hessian_limit: DEFAULT_FULL_HESSIAN_LIMIT,
        }
    }
}

pub fn build_bundle(
    gp: &TrainedGP,
    queries: &QuerySet,
    include_full_mean_hessian: bool,
) -> Result<DerivativeBundle> {
    build_bundle_with(
        gp,
        queries,
        BundleOptions {
            include_full_mean_hessian,
            ..Default::default()
        },
    )
}

pub fn build_bundle_with(
    gp: &TrainedGP,
    queries: &QuerySet,
    opts: BundleOptions,
) -> Result<DerivativeBundle> {
    let limit = opts
        .include_full_mean_hessian
        .then_some(opts.full_hessian_limit);
    let (mean_derivs, cov_derivs) = assemble(gp, queries, limit)?;
    Ok(DerivativeBundle {
        meta: BundleMeta {
            n: gp.n(),
            t: queries.len(),
            p: gp.dim(),
            params: *gp.params(),
            planned_inputs_hash: gp.digest(),
            measurements_hash: InputDigest::of_values(&gp.data().measurements),
            created_with_measurements: true,
            format_version: BUNDLE_FORMAT_VERSION,
        },
        mean_derivs,
        cov_derivs,
    })
}

impl DerivativeBundle {
    pub fn has_full_hessian(&self) -> bool {
        self.mean_derivs.hessian_full.is_some()
    }

    /// Fails with `StaleBundle` unless the bundle was built for a model with
    /// exactly these planned inputs.
    pub fn check_inputs(&self, digest: &InputDigest) -> Result<()> {
        if &self.meta.planned_inputs_hash != digest {
            return Err(GpError::StaleBundle(format!(
                "bundle built for planned inputs {} but model uses {}",
                self.meta.planned_inputs_hash, digest
            )));
        }
        Ok(())
    }

    pub fn check_model(&self, gp: &TrainedGP) -> Result<()> {
        self.check_inputs(&gp.digest())?;
        if &self.meta.params != gp.params() {
            return Err(GpError::StaleBundle("kernel parameters differ".into()));
        }
        Ok(())
    }

    fn expected_dims(&self) -> [Vec<usize>; 5] {
        let BundleMeta { n, t, p, .. } = self.meta;
        [
            vec![t, n, p],
            vec![t, n, p, p],
            vec![t, n * p, n * p],
            vec![t, t, n, p],
            vec![t, t, n, p, p],
        ]
    }

    fn validate_shapes(&self) -> Result<()> {
        let [mj, mh, mf, cj, ch] = self.expected_dims();
        let full = self.mean_derivs.hessian_full.as_ref();
        let pairs = [
            (self.mean_derivs.jacobian.dims(), mj.as_slice()),
            (self.mean_derivs.hessian_diag.dims(), mh.as_slice()),
            (self.cov_derivs.jacobian.dims(), cj.as_slice()),
            (self.cov_derivs.hessian_diag.dims(), ch.as_slice()),
        ];
        for (got, want) in pairs
            .into_iter()
            .chain(full.map(|f| (f.dims(), mf.as_slice())))
        {
            if got != want {
                return Err(GpError::Format(format!(
                    "tensor shape {got:?} does not match metadata {want:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let m = &self.meta;
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&m.format_version.to_le_bytes())?;
        for v in [m.n, m.t, m.p] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in [
            m.params.amplitude,
            m.params.length_scale,
            m.params.noise_std,
            m.params.jitter,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&m.planned_inputs_hash.0)?;
        w.write_all(&m.measurements_hash.0)?;
        w.write_all(&[
            m.created_with_measurements as u8,
            self.has_full_hessian() as u8,
        ])?;
        self.mean_derivs.jacobian.write_to(w)?;
        self.mean_derivs.hessian_diag.write_to(w)?;
        if let Some(f) = &self.mean_derivs.hessian_full {
            f.write_to(w)?;
        }
        self.cov_derivs.jacobian.write_to(w)?;
        self.cov_derivs.hessian_diag.write_to(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(GpError::Format(
                "not a derivative bundle (bad magic)".into(),
            ));
        }
        let format_version = read_u32(r)?;
        if format_version != BUNDLE_FORMAT_VERSION {
            return Err(GpError::Format(format!(
                "unsupported bundle version {format_version} (expected {BUNDLE_FORMAT_VERSION})"
            )));
        }
        let n = read_u64(r)? as usize;
        let t = read_u64(r)? as usize;
        let p = read_u64(r)? as usize;
        let params = KernelParams {
            amplitude: read_f64(r)?,
            length_scale: read_f64(r)?,
            noise_std: read_f64(r)?,
            jitter: read_f64(r)?,
        };
        let mut planned = [0u8; 32];
        read_exact(r, &mut planned)?;
        let mut meas = [0u8; 32];
        read_exact(r, &mut meas)?;
        let mut flags = [0u8; 2];
        read_exact(r, &mut flags)?;

        let cap = |dims: &[usize]| -> Result<usize> {
            dims.iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| GpError::Format("declared sizes overflow".into()))
        };
        let mean_jac = Tensor::read_from(r, cap(&[t, n, p])?)?;
        let mean_hess = Tensor::read_from(r, cap(&[t, n, p, p])?)?;
        let full = if flags[1] != 0 {
            Some(Tensor::read_from(r, cap(&[t, n * p, n * p])?)?)
        } else {
            None
        };
        let cov_jac = Tensor::read_from(r, cap(&[t, t, n, p])?)?;
        let cov_hess = Tensor::read_from(r, cap(&[t, t, n, p, p])?)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(GpError::Format("trailing bytes after last tensor".into()));
        }

        let bundle = Self {
            meta: BundleMeta {
                n,
                t,
                p,
                params,
                planned_inputs_hash: InputDigest(planned),
                measurements_hash: InputDigest(meas),
                created_with_measurements: flags[0] != 0,
                format_version,
            },
            mean_derivs: MeanDerivatives {
                jacobian: mean_jac,
                hessian_diag: mean_hess,
                hessian_full: full,
            },
            cov_derivs: CovDerivatives {
                jacobian: cov_jac,
                hessian_diag: cov_hess,
            },
        };
        bundle.validate_shapes()?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &DerivativeBundle, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    bundle.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<DerivativeBundle> {
    let mut r = BufReader::new(File::open(path)?);
    DerivativeBundle::read_from(&mut r)
}
