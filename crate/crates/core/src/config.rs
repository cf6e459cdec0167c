//! Flat `key = value` serialization of [`TrainConfig`].
//!
//! Blank lines and lines starting with `#` are ignored. Reals are written
//! with 17 significant digits so a snapshot reproduces a run bit-for-bit.

use std::fmt::Write as _;

use crate::error::ConfigError;
use crate::trainer::TrainConfig;

/// Every key understood by [`apply`], in snapshot order.
pub const KEYS: &[&str] = &[
    "algo",
    "gamma",
    "entropy_coef",
    "gae_lambda",
    "normalize_advantages",
    "kl_delta",
    "cg_iters",
    "cg_damping",
    "cg_tol",
    "backtrack_coeff",
    "backtrack_iters",
    "batch_size",
    "epoch_min_timesteps",
    "max_epochs",
    "value_lr",
    "value_epochs_per_update",
    "seed",
    "solved_window",
    "solved_threshold",
    "buffer_capacity",
    "buffer_clear_threshold",
    "gravity",
    "cart_mass",
    "pole_mass",
    "pole_half_length",
    "force_magnitude",
    "step_dt",
    "max_episode_steps",
];

/// Real number with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::invalid(key, format!("cannot parse {value:?}")))
}

/// Sets one field from its textual form.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let tr = &mut cfg.trust_region;
    let env = &mut cfg.env;
    match key.trim() {
        "algo" => cfg.algo = value.parse()?,
        "gamma" => cfg.gamma = parse(key, value)?,
        "entropy_coef" => tr.entropy_coef = parse(key, value)?,
        "gae_lambda" => cfg.gae_lambda = parse(key, value)?,
        "normalize_advantages" => cfg.normalize_advantages = parse(key, value)?,
        "kl_delta" => tr.kl_delta = parse(key, value)?,
        "cg_iters" => tr.cg_iters = parse(key, value)?,
        "cg_damping" => tr.cg_damping = parse(key, value)?,
        "cg_tol" => tr.cg_tol = parse(key, value)?,
        "backtrack_coeff" => tr.backtrack_coeff = parse(key, value)?,
        "backtrack_iters" => tr.backtrack_iters = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "epoch_min_timesteps" => cfg.epoch_min_timesteps = parse(key, value)?,
        "max_epochs" => cfg.max_epochs = parse(key, value)?,
        "value_lr" => cfg.value_lr = parse(key, value)?,
        "value_epochs_per_update" => cfg.value_epochs_per_update = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "solved_window" => cfg.solved_window = parse(key, value)?,
        "solved_threshold" => cfg.solved_threshold = parse(key, value)?,
        "buffer_capacity" => cfg.buffer_capacity = parse(key, value)?,
        "buffer_clear_threshold" => cfg.buffer_clear_threshold = parse(key, value)?,
        "gravity" => env.gravity = parse(key, value)?,
        "cart_mass" => env.cart_mass = parse(key, value)?,
        "pole_mass" => env.pole_mass = parse(key, value)?,
        "pole_half_length" => env.pole_half_length = parse(key, value)?,
        "force_magnitude" => env.force_magnitude = parse(key, value)?,
        "step_dt" => env.step_dt = parse(key, value)?,
        "max_episode_steps" => env.max_episode_steps = parse(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Applies every `key = value` line of `text` on top of `base`.
pub fn parse_into(base: TrainConfig, text: &str) -> Result<TrainConfig, ConfigError> {
    let mut cfg = base;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        apply(&mut cfg, key, value)?;
    }
    Ok(cfg)
}

/// Snapshot of every field, one `key = value` per line.
pub fn to_text(cfg: &TrainConfig) -> String {
    let tr = &cfg.trust_region;
    let env = &cfg.env;
    let values: Vec<String> = vec![
        cfg.algo.to_string(),
        fmt_real(cfg.gamma),
        fmt_real(tr.entropy_coef),
        fmt_real(cfg.gae_lambda),
        cfg.normalize_advantages.to_string(),
        fmt_real(tr.kl_delta),
        tr.cg_iters.to_string(),
        fmt_real(tr.cg_damping),
        fmt_real(tr.cg_tol),
        fmt_real(tr.backtrack_coeff),
        tr.backtrack_iters.to_string(),
        cfg.batch_size.to_string(),
        cfg.epoch_min_timesteps.to_string(),
        cfg.max_epochs.to_string(),
        fmt_real(cfg.value_lr),
        cfg.value_epochs_per_update.to_string(),
        cfg.seed.to_string(),
        cfg.solved_window.to_string(),
        fmt_real(cfg.solved_threshold),
        cfg.buffer_capacity.to_string(),
        fmt_real(cfg.buffer_clear_threshold),
        fmt_real(env.gravity),
        fmt_real(env.cart_mass),
        fmt_real(env.pole_mass),
        fmt_real(env.pole_half_length),
        fmt_real(env.force_magnitude),
        fmt_real(env.step_dt),
        env.max_episode_steps.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Algo;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        assert_eq!(parse_into(TrainConfig::default(), &to_text(&cfg)).unwrap(), cfg);
        assert_eq!(to_text(&cfg).lines().count(), KEYS.len());
    }

    #[test]
    fn file_overrides_and_comments() {
        let text = "# sweep point\nalgo = trpo\n\n gamma=0.9 \nseed = 4\n";
        let cfg = parse_into(TrainConfig::default(), text).unwrap();
        assert_eq!(cfg.algo, Algo::Trpo);
        assert_eq!(cfg.gamma, 0.9);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.batch_size, 32);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_into(TrainConfig::default(), "nonsense"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            parse_into(TrainConfig::default(), "colour = red"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(parse_into(TrainConfig::default(), "gamma = high").is_err());
    }

    proptest! {
        #[test]
        fn reals_round_trip_bit_exact(gamma in 0.0f64..1.0, lr in 1e-8f64..1.0, coef in 0.0f64..1.0) {
            let mut cfg = TrainConfig { gamma, value_lr: lr, ..TrainConfig::default() };
            cfg.trust_region.entropy_coef = coef;
            let back = parse_into(TrainConfig::default(), &to_text(&cfg)).unwrap();
            prop_assert_eq!(back.gamma.to_bits(), gamma.to_bits());
            prop_assert_eq!(back.value_lr.to_bits(), lr.to_bits());
            prop_assert_eq!(back.trust_region.entropy_coef.to_bits(), coef.to_bits());
        }
    }
}
