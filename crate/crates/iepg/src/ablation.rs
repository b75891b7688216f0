//! Study arms: increment counts, inference-time intermediate removal and
//! component knockouts, all trained on one dataset against one frozen
//! global evolution model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use iepg_core::fusion::{Ablation, FusionConfig, FusionModel};
use iepg_core::gec::GecModel;
use iepg_core::metrics::{eval_report, EvalOptions, MetricReport};
use iepg_core::pose::Dataset;
use iepg_core::train::{train_pis, LossRecord, TrainConfig, TurnPair};

use crate::error::{CliError, CliResult};

pub const INCREMENT_ARMS: [usize; 4] = [0, 1, 2, 5];
pub const KNOCKOUTS: [&str; 6] = ["no_tpkf", "no_iec", "no_msc", "no_eada", "ie6", "ie9"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    /// The base configuration.
    Full,
    /// The base configuration retrained with `n` intermediate guides.
    Increments(usize),
    /// The full model with `r` guides randomly dropped at inference.
    Removal(usize),
    Knockout(String),
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Full => f.write_str("full"),
            Arm::Increments(n) => write!(f, "inc{n}"),
            Arm::Removal(r) => write!(f, "remove{r}"),
            Arm::Knockout(k) => f.write_str(k),
        }
    }
}

impl FromStr for Arm {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let num = |rest: &str| rest.parse::<usize>().ok();
        if s == "full" {
            Ok(Arm::Full)
        } else if let Some(n) = s.strip_prefix("inc").and_then(num) {
            Ok(Arm::Increments(n))
        } else if let Some(r) = s.strip_prefix("remove").and_then(num) {
            Ok(Arm::Removal(r))
        } else if KNOCKOUTS.contains(&s) {
            Ok(Arm::Knockout(s.to_owned()))
        } else {
            Err(CliError::Usage(format!(
                "unknown arm `{s}` (expected full, inc<N>, remove<N>, {} or a group: increments, removal, knockouts, all)",
                KNOCKOUTS.join(", ")
            )))
        }
    }
}

/// Expands group names and arm names into a de-duplicated arm list, in
/// the order given.
pub fn parse_arms(names: &[String], base_increments: usize) -> CliResult<Vec<Arm>> {
    let mut out: Vec<Arm> = Vec::new();
    let mut push = |a: Arm| {
        if !out.contains(&a) {
            out.push(a);
        }
    };
    for name in names {
        match name.as_str() {
            "increments" => INCREMENT_ARMS.iter().for_each(|&n| push(Arm::Increments(n))),
            "removal" => (0..=base_increments).for_each(|r| push(Arm::Removal(r))),
            "knockouts" => {
                push(Arm::Full);
                KNOCKOUTS.iter().for_each(|k| push(Arm::Knockout((*k).to_owned())));
            }
            "all" => {
                INCREMENT_ARMS.iter().for_each(|&n| push(Arm::Increments(n)));
                (0..=base_increments).for_each(|r| push(Arm::Removal(r)));
                push(Arm::Full);
                KNOCKOUTS.iter().for_each(|k| push(Arm::Knockout((*k).to_owned())));
            }
            other => push(other.parse()?),
        }
    }
    Ok(out)
}

fn knockout(base: &Ablation, name: &str) -> Ablation {
    let mut a = base.clone();
    match name {
        "no_tpkf" => a.no_tpkf = true,
        "no_iec" => a.no_iec = true,
        "no_msc" => a.no_msc = true,
        "no_eada" => a.no_eada = true,
        "ie6" => a.ie_depth = 6,
        "ie9" => a.ie_depth = 9,
        _ => unreachable!("arm names are validated on parse"),
    }
    a
}

/// Training configuration of an arm's model and the removal applied at
/// evaluation.
pub fn arm_setup(arm: &Arm, fusion: &FusionConfig, train: &TrainConfig) -> CliResult<(FusionConfig, TrainConfig, usize)> {
    let (mut f, mut t) = (fusion.clone(), train.clone());
    let remove = match arm {
        Arm::Full => 0,
        Arm::Increments(n) => {
            t.increments = *n;
            0
        }
        Arm::Removal(r) => {
            if *r > train.increments {
                return Err(CliError::Usage(format!(
                    "cannot remove {r} of {} intermediates",
                    train.increments
                )));
            }
            *r
        }
        Arm::Knockout(k) => {
            f.ablation = knockout(&fusion.ablation, k);
            0
        }
    };
    Ok((f, t, remove))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmResult {
    pub arm: String,
    pub report: MetricReport,
}

/// Runs arms against a shared dataset, evaluation pair list and frozen
/// global evolution model. Models are cached by their training
/// configuration, so `full`, `inc5` (for a 5-increment base) and every
/// `remove<N>` arm share one training run.
pub struct Study<'a> {
    pub data: &'a Dataset,
    pub gec: &'a GecModel,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub pairs: Vec<TurnPair>,
    pub eval_seed: u64,
    models: BTreeMap<String, FusionModel>,
}

impl<'a> Study<'a> {
    pub fn new(
        data: &'a Dataset,
        gec: &'a GecModel,
        fusion: FusionConfig,
        train: TrainConfig,
        pairs: Vec<TurnPair>,
        eval_seed: u64,
    ) -> Self {
        Study {
            data,
            gec,
            fusion,
            train,
            pairs,
            eval_seed,
            models: BTreeMap::new(),
        }
    }

    fn key(f: &FusionConfig, t: &TrainConfig) -> String {
        format!(
            "{}|{}",
            serde_json::to_string(f).expect("config serializes"),
            serde_json::to_string(t).expect("config serializes")
        )
    }

    /// The trained model of an arm, training it on first use.
    pub fn model(&mut self, arm: &Arm, log: &mut dyn FnMut(&str, &LossRecord)) -> CliResult<&FusionModel> {
        let (f, t, _) = arm_setup(arm, &self.fusion, &self.train)?;
        let key = Self::key(&f, &t);
        if !self.models.contains_key(&key) {
            let mut rng = iepg_core::rng_from_seed(t.seed);
            let model = FusionModel::new(&f, &mut rng)?;
            let name = arm.to_string();
            let (model, _) = train_pis(self.data, model, Some(self.gec.clone()), &t, |r| log(&name, r))?;
            self.models.insert(key.clone(), model);
        }
        Ok(&self.models[&key])
    }

    pub fn evaluate(&mut self, arm: &Arm, log: &mut dyn FnMut(&str, &LossRecord)) -> CliResult<ArmResult> {
        let (_, t, remove) = arm_setup(arm, &self.fusion, &self.train)?;
        let opts = EvalOptions {
            steps: t.steps(),
            remove,
            seed: self.eval_seed,
        };
        let (data, gec) = (self.data, self.gec);
        let pairs = self.pairs.clone();
        let model = self.model(arm, log)?;
        let mut report = eval_report(model, Some(gec), data, &pairs, &opts)?;
        report.config.arm = Some(arm.to_string());
        report.config.seed = t.seed;
        Ok(ArmResult {
            arm: arm.to_string(),
            report,
        })
    }

    pub fn run(&mut self, arms: &[Arm], log: &mut dyn FnMut(&str, &LossRecord)) -> CliResult<Vec<ArmResult>> {
        arms.iter().map(|a| self.evaluate(a, log)).collect()
    }
}

/// Aligned comparison of arm aggregates.
pub fn comparison_table(results: &[ArmResult]) -> String {
    let mut s = format!(
        "{:<10} {:>5} {:>7} {:>6} {:>8} {:>8}\n",
        "arm", "steps", "removed", "pairs", "ssim", "psnr"
    );
    for r in results {
        s += &format!(
            "{:<10} {:>5} {:>7} {:>6} {:>8.4} {:>8.3}\n",
            r.arm,
            r.report.config.steps,
            r.report.config.removed,
            r.report.pairs.len(),
            r.report.mean_ssim,
            r.report.mean_psnr
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_round_trip() {
        for name in ["full", "inc0", "inc5", "remove2", "no_tpkf", "ie9"] {
            assert_eq!(name.parse::<Arm>().unwrap().to_string(), name);
        }
        assert!(matches!("no_attention".parse::<Arm>(), Err(CliError::Usage(_))));
        assert!(matches!("incX".parse::<Arm>(), Err(CliError::Usage(_))));
    }

    #[test]
    fn groups_expand() {
        let arms = parse_arms(&["increments".into()], 5).unwrap();
        assert_eq!(arms.len(), 4);
        let arms = parse_arms(&["knockouts".into(), "no_iec".into()], 5).unwrap();
        let names: Vec<String> = arms.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["full", "no_tpkf", "no_iec", "no_msc", "no_eada", "ie6", "ie9"]);
        assert_eq!(parse_arms(&["removal".into()], 5).unwrap().len(), 6);
    }

    #[test]
    fn removal_shares_the_full_training_config() {
        let (f, t) = (FusionConfig::default(), TrainConfig::default());
        let full = arm_setup(&Arm::Full, &f, &t).unwrap();
        let rem = arm_setup(&Arm::Removal(2), &f, &t).unwrap();
        assert_eq!((&full.0, &full.1), (&rem.0, &rem.1));
        assert_eq!(rem.2, 2);
        assert!(arm_setup(&Arm::Removal(6), &f, &t).is_err());
        let ie6 = arm_setup(&Arm::Knockout("ie6".into()), &f, &t).unwrap();
        assert_eq!(ie6.0.ablation.ie_depth, 6);
    }
}
