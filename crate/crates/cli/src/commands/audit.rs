use std::path::PathBuf;

use gpdelta_core::audit::{audit_instance, random_instance, AuditReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{AuditSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{write_json, Meta};

#[derive(Debug, clap::Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training points per instance.
    #[arg(long)]
    pub n: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    pub p: Option<usize>,
    /// Query points per instance.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Also audit the cross-block mean Hessian.
    #[arg(long)]
    pub full: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AuditOutput<'a> {
    spec: &'a AuditSpec,
    report: &'a AuditReport,
}

pub fn run(args: &AuditArgs) -> CliResult<()> {
    let mut run = RunConfig::load(args.config.as_deref())?;
    let mut spec = run.audit.take().unwrap_or_default();
    spec.n = args.n.unwrap_or(spec.n);
    spec.p = args.p.unwrap_or(spec.p);
    spec.t = args.t.unwrap_or(spec.t);
    spec.seed = args.seed.unwrap_or(spec.seed);
    spec.instances = args.instances.unwrap_or(spec.instances);
    spec.settings.full_hessian |= args.full;
    if spec.n == 0 || spec.p == 0 || spec.t == 0 || spec.instances == 0 {
        return Err(CliError::validation("audit sizes must be positive"));
    }
    run.audit = Some(spec.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let reports = (0..spec.instances)
        .map(|_| {
            audit_instance(
                &random_instance(&mut rng, spec.n, spec.p, spec.t),
                &spec.settings,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = AuditReport::merge(&reports);

    for f in &report.families {
        println!(
            "{} {} max_rel_error={:.3e} tolerance={:.1e}",
            if f.pass { "PASS" } else { "FAIL" },
            f.family,
            f.max_rel_error,
            f.tolerance
        );
    }
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    if let Some(path) = run.out_path(args.out.as_deref()) {
        write_json(
            &path,
            &Meta::new(
                "audit",
                &run,
                AuditOutput {
                    spec: &spec,
                    report: &report,
                },
            ),
        )?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::numerical("derivative audit exceeded tolerance"))
    }
}
