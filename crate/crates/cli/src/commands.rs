//! Campaign subcommands.

use std::path::{Path, PathBuf};

use serde_json::json;
use wgfi::analyze::{
    layer_vulnerability, optype_vulnerability, sweep_csv_row, vuln_csv_row, CampaignResult, Evaluator, VulnReport,
    SWEEP_CSV_HEADER, VULN_CSV_HEADER,
};
use wgfi::io::{builtin_model, generate_dataset, load_dataset, load_model};
use wgfi::mitigation::profile_ranges;
use wgfi::tmr::{plan_tmr, CostModel, PlanOptions, TmrPlan};
use wgfi::{Dataset, ExecConfig, FaultTrace, InjectionConfig, ModelDef, OpRanges, RangeProfile};

use crate::config::{read_json, CampaignConfig, Command, BUILTIN_PREFIX};
use crate::error::{CliError, CliResult};
use crate::output::Table;

pub const PLAN_CSV_HEADER: &str = "engine,ber,total_ops,segment_size,segments,n,P,target_acc,achieved_acc,acc_raw,target_unreachable,overhead,overhead_normalized";
pub const EVAL_TMR_CSV_HEADER: &str = "ber,engine,trials,samples,P,acc_raw,ci95_raw,acc_tmr,ci95_tmr,plan_acc";
pub const PROFILE_CSV_HEADER: &str = "layer,min,max";

pub fn load_model_arg(model: &str) -> CliResult<ModelDef> {
    Ok(match model.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_model(name)?,
        None => load_model(Path::new(model))?,
    })
}

/// Trace file of the `index`-th BER point.
pub fn trace_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("ber{index}.jsonl"))
}

/// A resolved campaign ready to run.
pub struct Campaign {
    pub command: Command,
    pub config: CampaignConfig,
    pub model: ModelDef,
    pub dataset: Dataset,
    pub workers: Option<usize>,
    /// Replay stored traces instead of recording them.
    pub replay: bool,
}

impl Campaign {
    /// Validates `config`, loads inputs and fills every remaining default.
    pub fn prepare(command: Command, config: CampaignConfig, workers: Option<usize>, replay: bool) -> CliResult<Self> {
        let mut config = config.with_defaults();
        config.validate()?;
        let model = load_model_arg(config.model.as_deref().expect("validated"))?;
        config.engine.get_or_insert(model.engine);
        model.validate_for(config.engine.expect("set above"))?;
        let dataset = match &config.dataset {
            Some(path) => load_dataset(path)?,
            None => generate_dataset(
                &model,
                config.samples.expect("defaulted"),
                config.dataset_seed.expect("defaulted"),
            ),
        };
        match command {
            Command::ProfileRanges => {}
            Command::PlanTmr => {
                if config.bers()?.len() != 1 {
                    return Err(CliError::config("plan-tmr takes exactly one ber"));
                }
                if config.segment_size.is_none() || config.target_acc.is_none() {
                    return Err(CliError::config("plan-tmr needs segment_size and target_acc"));
                }
                config.mul_weight.get_or_insert(CostModel::default().mul_weight);
                config.add_weight.get_or_insert(CostModel::default().add_weight);
                config.literal_do_while.get_or_insert(false);
            }
            Command::EvalTmr => {
                config.bers()?;
                match &config.plan {
                    Some(p) if p.exists() => {}
                    Some(p) => return Err(CliError::config(format!("{} does not exist", p.display()))),
                    None => return Err(CliError::config("eval-tmr needs a plan")),
                }
            }
            _ => {
                config.bers()?;
            }
        }
        if replay && config.trace_dir.is_none() {
            log::warn!("campaign was not traced; replaying from its seed");
        }
        Ok(Self {
            command,
            config,
            model,
            dataset,
            workers,
            replay,
        })
    }

    pub fn exec_config(&self) -> ExecConfig {
        let mut cfg = ExecConfig::new(self.config.engine.expect("resolved"));
        cfg.exposure = self.config.exposure.unwrap_or_default().exposure();
        cfg.winograd.emit_filter_transform = self.config.emit_filter_transform.unwrap_or(false);
        cfg
    }

    pub fn run(&self) -> CliResult<Table> {
        match self.command {
            Command::Sweep => self.sweep(),
            Command::LayerVuln | Command::OptypeVuln => self.vulnerability(),
            Command::PlanTmr => self.plan(),
            Command::EvalTmr => self.eval_tmr(),
            Command::ProfileRanges => self.profile(),
        }
    }

    fn evaluator(&self) -> CliResult<Evaluator<'_>> {
        let mut eval = Evaluator::new(&self.model, &self.dataset, self.exec_config())?.with_workers(self.workers);
        if let Some(path) = &self.config.clamp_profile {
            let profile: RangeProfile = read_json(path)?;
            eval = eval.with_clamp(profile, self.config.clamp_mode.unwrap_or_default())?;
        }
        Ok(eval)
    }

    /// Evaluator for BER point `index`. With a trace directory it is backed by that
    /// point's trace, recorded first (from a campaign with `protected` under TMR) unless
    /// replaying; the recording campaign's result is returned alongside.
    fn point_evaluator(
        &self,
        index: usize,
        inj: &InjectionConfig,
        protected: Option<&OpRanges>,
    ) -> CliResult<(Evaluator<'_>, Option<CampaignResult>)> {
        let eval = self.evaluator()?;
        let Some(dir) = &self.config.trace_dir else {
            return Ok((eval, None));
        };
        let path = trace_path(dir, index);
        if self.replay {
            let trace = FaultTrace::load(&path)?;
            return Ok((eval.with_trace(&trace)?, None));
        }
        let (result, trace) = eval.campaign_traced(inj, protected)?;
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        trace.save(&path)?;
        log::info!("wrote {} flips to {}", trace.len(), path.display());
        Ok((eval.with_trace(&trace)?, Some(result)))
    }

    fn sweep(&self) -> CliResult<Table> {
        let mut table = Table::new(SWEEP_CSV_HEADER);
        for (i, &ber) in self.config.bers()?.iter().enumerate() {
            log::info!("sweep: ber {ber}");
            let inj = self.config.injection(ber)?;
            let (eval, recorded) = self.point_evaluator(i, &inj, None)?;
            let r = match recorded {
                Some(r) => r,
                None => eval.campaign(&inj)?,
            };
            table.push(sweep_csv_row(&r), sweep_json(&r));
        }
        Ok(table)
    }

    fn vulnerability(&self) -> CliResult<Table> {
        let mut table = Table::new(VULN_CSV_HEADER);
        for (i, &ber) in self.config.bers()?.iter().enumerate() {
            log::info!("{}: ber {ber}", self.command);
            let inj = self.config.injection(ber)?;
            let (eval, _) = self.point_evaluator(i, &inj, None)?;
            let reports = match self.command {
                Command::LayerVuln => layer_vulnerability(&eval, &inj)?,
                _ => {
                    let (mul, add) = optype_vulnerability(&eval, &inj)?;
                    vec![mul, add]
                }
            };
            for r in &reports {
                table.push(vuln_csv_row(r), vuln_json(r));
            }
        }
        Ok(table)
    }

    fn cost_model(&self) -> CostModel {
        CostModel {
            mul_weight: self.config.mul_weight.unwrap_or(CostModel::default().mul_weight),
            add_weight: self.config.add_weight.unwrap_or(CostModel::default().add_weight),
            ..CostModel::default()
        }
    }

    fn plan(&self) -> CliResult<Table> {
        let ber = self.config.bers()?[0];
        let inj = self.config.injection(ber)?;
        let (eval, _) = self.point_evaluator(0, &inj, None)?;
        let opts = PlanOptions {
            literal_do_while: self.config.literal_do_while.unwrap_or(false),
        };
        let plan = plan_tmr(
            &eval,
            &inj,
            self.config.segment_size.expect("checked in prepare"),
            self.config.target_acc.expect("checked in prepare"),
            &self.cost_model(),
            opts,
        )?;
        if let (Some(path), false) = (&self.config.plan, self.replay) {
            plan.save(path)?;
            log::info!("wrote plan to {}", path.display());
        }
        let mut table = Table::new(PLAN_CSV_HEADER);
        table.push(
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                plan.engine,
                plan.ber,
                plan.total_ops,
                plan.segment_size,
                plan.order.len(),
                plan.n,
                plan.protection_ratio,
                plan.target_acc,
                plan.achieved_acc,
                plan.acc_raw,
                plan.target_unreachable,
                plan.overhead,
                plan.overhead_normalized
            ),
            serde_json::to_value(&plan).expect("plan serializes"),
        );
        Ok(table)
    }

    fn eval_tmr(&self) -> CliResult<Table> {
        let plan = TmrPlan::load(self.config.plan.as_deref().expect("checked in prepare"))?;
        plan.check(&self.model, &self.exec_config())?;
        let ranges = plan.protected_ranges()?;
        let mut table = Table::new(EVAL_TMR_CSV_HEADER);
        for (i, &ber) in self.config.bers()?.iter().enumerate() {
            log::info!("eval-tmr: ber {ber}");
            let inj = self.config.injection(ber)?;
            let (eval, recorded) = self.point_evaluator(i, &inj, Some(&ranges))?;
            let tmr = match recorded {
                Some(r) => r,
                None => eval.campaign_tmr(&inj, &ranges)?,
            };
            let raw = eval.campaign(&inj)?;
            table.push(
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    ber,
                    tmr.engine,
                    tmr.trials.len(),
                    tmr.samples,
                    plan.protection_ratio,
                    raw.mean_accuracy,
                    raw.ci95_half_width,
                    tmr.mean_accuracy,
                    tmr.ci95_half_width,
                    plan.achieved_acc
                ),
                json!({
                    "ber": ber,
                    "engine": tmr.engine,
                    "trials": tmr.trials.len(),
                    "samples": tmr.samples,
                    "P": plan.protection_ratio,
                    "acc_raw": raw.mean_accuracy,
                    "ci95_raw": raw.ci95_half_width,
                    "acc_tmr": tmr.mean_accuracy,
                    "ci95_tmr": tmr.ci95_half_width,
                    "plan_acc": plan.achieved_acc,
                }),
            );
        }
        Ok(table)
    }

    fn profile(&self) -> CliResult<Table> {
        let profile = profile_ranges(&self.model, &self.dataset, &self.exec_config())?;
        if let (Some(path), false) = (&self.config.profile_out, self.replay) {
            let text = serde_json::to_string_pretty(&profile).expect("profile serializes") + "\n";
            std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        }
        let mut table = Table::new(PROFILE_CSV_HEADER);
        for (layer, (lo, hi)) in profile.layers() {
            table.push(
                format!("{layer},{lo},{hi}"),
                json!({"layer": layer, "min": lo, "max": hi}),
            );
        }
        Ok(table)
    }
}

fn sweep_json(r: &CampaignResult) -> serde_json::Value {
    json!({
        "ber": r.ber,
        "engine": r.engine,
        "granularity": r.granularity,
        "trials": r.trials.len(),
        "samples": r.samples,
        "mean_accuracy": r.mean_accuracy,
        "ci95_half_width": r.ci95_half_width,
    })
}

fn vuln_json(r: &VulnReport) -> serde_json::Value {
    serde_json::to_value(r).expect("report serializes")
}
