use std::path::Path;

use npnet::model::gradcheck::{max_relative_error, random_case, CaseSpec, RELATIVE_ERROR_FLOOR};
use npnet::model::{backward, forward, numeric_gradient, Mode, NormMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::CliError;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

const ALL_NORMS: [NormMode; 4] = [
    NormMode::CapNorm,
    NormMode::BatchNorm { affine: false },
    NormMode::BatchNorm { affine: true },
    NormMode::None,
];

pub fn cmd_gradcheck(
    config: Option<&Path>,
    trials: usize,
    seed: u64,
    json: bool,
    inject_fault: bool,
) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let fixed = config.map(RunConfig::load).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let (mut unit_branch, mut std_branch) = (0, 0);
    for trial in 0..trials {
        let spec = match &fixed {
            Some(cfg) => CaseSpec {
                layers: vec![cfg.train.hidden_layers + 1],
                norm: cfg.train.norm_mode(),
                ..CaseSpec::default()
            },
            None => CaseSpec {
                norm: ALL_NORMS[trial % ALL_NORMS.len()],
                ..CaseSpec::default()
            },
        };
        let case = random_case(&spec, &mut rng)?;
        let branches = case.capnorm_branches();
        unit_branch += branches.unit_divisor;
        std_branch += branches.std_divisor;
        let cache = forward(&case.params, &case.config, case.x.view(), Mode::Train)?;
        let mut analytic = backward(&case.params, &case.config, &cache, &case.labels, case.scale)?;
        if inject_fault {
            analytic.weights[0][[0, 0]] = analytic.weights[0][[0, 0]] * 1.01 + 1e-3;
        }
        let numeric = numeric_gradient(
            &case.params,
            &case.config,
            case.x.view(),
            &case.labels,
            case.scale,
            STEP,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, RELATIVE_ERROR_FLOOR));
    }
    let pass = worst < TOLERANCE;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "trials": trials,
                "max_relative_error": worst,
                "capnorm_unit_divisor_units": unit_branch,
                "capnorm_std_divisor_units": std_branch,
                "pass": pass,
            })
        );
    } else {
        println!("trials {trials}");
        println!("max relative error {worst:.3e} (tolerance {TOLERANCE:.0e})");
        println!("capnorm units with sigma <= 1: {unit_branch}, sigma > 1: {std_branch}");
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {worst:.3e}"
        )))
    }
}
