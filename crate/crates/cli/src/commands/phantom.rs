use super::read_config;
use crate::error::CliError;
use crate::output::{prepare_dir, write_json, Clock, InputDigest, RunManifest, MANIFEST_FILE};
use clap::Args;
use l1dfl_core::phantom::{cohort_configs, generate, CohortSpec, PhantomConfig};
use l1dfl_core::volgrid::{write_vvol, ScanCase};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const LONG_ABOUT: &str = "\
Generate a phantom cohort as .vvol triplets.

The config is a JSON object {\"base\": PhantomConfig, \"cohort\": CohortSpec};
both keys are optional and every field has a default. The cohort draws its own
lesions and traps; the base supplies geometry, noise and GT threshold, and its
lesion and trap lists are ignored.

Outputs, per case ID: ID_pet.vvol, ID_ct.vvol, ID_gt.vvol; plus cases.json
(the effective per-case configs) and manifest.json.";

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Cohort config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomJob {
    pub base: PhantomConfig,
    pub cohort: CohortSpec,
}

#[derive(Debug, Serialize)]
struct CaseEntry<'a> {
    id: &'a str,
    single_lesion: bool,
    config: &'a PhantomConfig,
}

/// Checks the base geometry and noise settings. Base lesions and traps are
/// ignored because the cohort draws its own.
pub fn validate_job(job: &PhantomJob) -> Result<(), CliError> {
    PhantomConfig {
        lesions: Vec::new(),
        traps: Vec::new(),
        ..job.base.clone()
    }
    .validate()?;
    Ok(())
}

/// Generates the cohort of `job` and writes its .vvol files into `dir`,
/// returning the cases in id order.
pub fn write_cohort(job: &PhantomJob, dir: &Path) -> Result<Vec<(ScanCase, PhantomConfig)>, CliError> {
    let configs = cohort_configs(&job.base, &job.cohort)?;
    let cases: Vec<(ScanCase, PhantomConfig)> = configs
        .into_par_iter()
        .map(|(id, config)| {
            let mut case = generate(&config)?;
            case.id = id;
            for (suffix, vol) in [("pet", &case.pet), ("ct", &case.ct), ("gt", &case.gt)] {
                let path = dir.join(format!("{}_{suffix}.vvol", case.id));
                write_vvol(vol, &path).map_err(|e| CliError::write(&path, std::io::Error::other(e)))?;
            }
            Ok((case, config))
        })
        .collect::<Result<_, CliError>>()?;
    let entries: Vec<CaseEntry> = cases
        .iter()
        .map(|(c, cfg)| CaseEntry {
            id: &c.id,
            single_lesion: cfg.lesions.len() == 1,
            config: cfg,
        })
        .collect();
    write_json(&dir.join("cases.json"), &entries)?;
    Ok(cases)
}

pub fn run(args: &PhantomArgs, clock: Clock) -> Result<(), CliError> {
    let job: PhantomJob = read_config(&args.config)?;
    validate_job(&job)?;
    let mut manifest = RunManifest::new("phantom", &job, Some(job.cohort.seed), clock);
    manifest.inputs.push(InputDigest::of(&args.config)?);
    prepare_dir(&args.out, args.force)?;
    let cases = write_cohort(&job, &args.out)?;
    for (c, _) in &cases {
        for suffix in ["pet", "ct", "gt"] {
            manifest.outputs.push(format!("{}_{suffix}.vvol", c.id));
        }
    }
    manifest.outputs.push("cases.json".into());
    manifest.finish(&args.out.join(MANIFEST_FILE), clock)
}
