//! Problem files (TOML) and their conversion into library types.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dosechoice::trial::read_records;
use dosechoice::{
    ingest, AllocationOptions, CostSpec, DoseGrid, GridSearch, OutcomeDistribution, Restrictions,
    ThresholdDistribution, TrialArm, TrialDesign, TrialEvidence, WelfareSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// Highest dose `T`; doses are `0..=T`.
    pub max_dose: usize,
    /// `w(d, e)` in cell order (0,0), (1,0), (0,1), (1,1).
    pub welfare: [f64; 4],
    #[serde(default)]
    pub cost: CostInput,
    #[serde(default)]
    pub restrictions: Vec<String>,
    #[serde(default)]
    pub arms: Vec<ArmInput>,
    #[serde(default)]
    pub options: OptionsInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostInput {
    Values(Vec<f64>),
    Named(NamedCost),
}

impl Default for CostInput {
    fn default() -> Self {
        CostInput::Named(NamedCost::Zero)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NamedCost {
    Zero,
    Linear { slope: f64 },
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmInput {
    pub dose: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<[u64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchInput {
    #[default]
    Auto,
    Full,
    CoarseToFine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsInput {
    /// Grid resolution `M` for allocations; defaults depend on `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
    #[serde(default)]
    pub search: SearchInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_budget: Option<u64>,
    #[serde(default = "yes")]
    pub analytical: bool,
    /// Project inconsistent empirical evidence before deciding.
    #[serde(default)]
    pub repair: bool,
    /// Normalise arm probabilities that do not sum to one.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn yes() -> bool {
    true
}

impl Default for OptionsInput {
    fn default() -> Self {
        Self {
            grid_resolution: None,
            search: SearchInput::Auto,
            grid_budget: None,
            analytical: true,
            repair: false,
            normalize: false,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeInput {
    #[default]
    Clinical,
    Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationInput {
    /// `q(t_d = h, t_e = i)` as `T + 2` rows of `T + 2` entries.
    pub true_q: Vec<Vec<f64>>,
    pub doses: Vec<usize>,
    pub sizes: Vec<u64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: ModeInput,
}

fn default_replications() -> usize {
    100
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn grid(&self) -> Result<DoseGrid> {
        Ok(DoseGrid::new(self.max_dose)?)
    }

    pub fn welfare_spec(&self) -> Result<WelfareSpec> {
        Ok(WelfareSpec::new(self.welfare)?)
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        let grid = self.grid()?;
        let cost = match &self.cost {
            CostInput::Values(v) | CostInput::Named(NamedCost::Explicit { values: v }) => CostSpec::new(&grid, v.clone())?,
            CostInput::Named(NamedCost::Zero) => CostSpec::zero(&grid),
            CostInput::Named(NamedCost::Linear { slope }) => CostSpec::linear(&grid, *slope)?,
        };
        Ok(cost)
    }

    pub fn restriction_flags(&self) -> Result<Restrictions> {
        let mut r = Restrictions::none();
        for name in &self.restrictions {
            match name.as_str() {
                "no_ae_at_zero" => r.no_ae_at_zero = true,
                "concurrent_thresholds" => r.concurrent_thresholds = true,
                "independence" => r.independence = true,
                other => bail!(
                    "unknown restriction `{other}` (expected no_ae_at_zero, concurrent_thresholds or independence)"
                ),
            }
        }
        r.validate()?;
        Ok(r)
    }

    /// Evidence from the `arms` table, or from subject records when given.
    pub fn evidence(&self, records: Option<&Path>) -> Result<TrialEvidence> {
        let grid = self.grid()?;
        if let Some(path) = records {
            if !self.arms.is_empty() {
                bail!("give arms in the problem file or a records file, not both");
            }
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let recs = read_records(file).with_context(|| format!("reading {}", path.display()))?;
            return Ok(ingest(&recs, &grid)?);
        }
        if self.arms.is_empty() {
            bail!("the problem has no trial arms");
        }
        let mut arms = Vec::with_capacity(self.arms.len());
        for arm in &self.arms {
            let context = || format!("arm at dose {}", arm.dose);
            let built = match (arm.probabilities, arm.counts) {
                (Some(p), None) if self.options.normalize => {
                    TrialArm::new(arm.dose, OutcomeDistribution::normalized(p).with_context(context)?)
                }
                (Some(p), None) => TrialArm::new(arm.dose, OutcomeDistribution::new(p).with_context(context)?),
                (None, Some(c)) => TrialArm::new(arm.dose, OutcomeDistribution::from_counts(c).with_context(context)?)
                    .with_sample_size(c.iter().sum()),
                _ => bail!("arm at dose {} needs exactly one of `probabilities` or `counts`", arm.dose),
            };
            arms.push(built);
        }
        Ok(TrialEvidence::new(grid, arms)?)
    }

    pub fn allocation_options(&self, resolution: Option<usize>, search: Option<SearchInput>) -> Result<AllocationOptions> {
        let grid = self.grid()?;
        let mut opts = AllocationOptions::default_for(&grid);
        opts.prefer_analytical = self.options.analytical;
        if let Some(b) = self.options.grid_budget {
            opts.budget = b;
        }
        let resolution = resolution.or(self.options.grid_resolution);
        opts.search = match (search.unwrap_or(self.options.search), resolution) {
            (SearchInput::Auto, None) => opts.search,
            (SearchInput::Auto | SearchInput::Full, Some(m)) => GridSearch::Full { resolution: m },
            (SearchInput::Full, None) => GridSearch::Full { resolution: 100 },
            (SearchInput::CoarseToFine, m) => GridSearch::CoarseToFine { coarse: 20, fine: m.unwrap_or(200) },
        };
        if matches!(opts.search, GridSearch::Full { resolution: 0 } | GridSearch::CoarseToFine { fine: 0, .. }) {
            bail!("grid resolution must be at least 1");
        }
        Ok(opts)
    }

    pub fn simulation_inputs(&self) -> Result<(ThresholdDistribution, TrialDesign, &SimulationInput)> {
        let sim = self.simulation.as_ref().ok_or_else(|| anyhow!("the problem has no [simulation] section"))?;
        let grid = self.grid()?;
        let q = ThresholdDistribution::from_rows(grid, &sim.true_q).context("simulation.true_q")?;
        let design = TrialDesign::new(&grid, sim.doses.clone(), sim.sizes.clone())?;
        Ok((q, design, sim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(extra: &str) -> String {
        format!("max_dose = 2\nwelfare = [1.0, 0.25, 0.75, 0.0]\n{extra}\n[[arms]]\ndose = 0\ncounts = [1, 3, 0, 0]\n")
    }

    #[test]
    fn cost_forms() {
        for (text, expected) in [
            ("", vec![0.0, 0.0, 0.0]),
            ("cost = [0.0, 0.1, 0.3]", vec![0.0, 0.1, 0.3]),
            ("cost = { kind = \"linear\", slope = 0.1 }", vec![0.0, 0.1, 0.2]),
            ("cost = { kind = \"explicit\", values = [0.0, 0.0, 0.3] }", vec![0.0, 0.0, 0.3]),
        ] {
            let p = ProblemFile::parse(&base(text)).unwrap();
            let got = p.cost_spec().unwrap().values().to_vec();
            assert!(got.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12), "{text}: {got:?}");
        }
        assert!(ProblemFile::parse(&base("cost = [0.0, 0.1]")).unwrap().cost_spec().is_err());
    }

    #[test]
    fn restriction_names() {
        let p = ProblemFile::parse(&base("restrictions = [\"no_ae_at_zero\", \"concurrent_thresholds\"]")).unwrap();
        let r = p.restriction_flags().unwrap();
        assert!(r.no_ae_at_zero && r.concurrent_thresholds && !r.independence);
        let p = ProblemFile::parse(&base("restrictions = [\"monotone\"]")).unwrap();
        assert!(p.restriction_flags().unwrap_err().to_string().contains("monotone"));
    }

    #[test]
    fn counts_keep_their_sample_size() {
        let p = ProblemFile::parse(&base("")).unwrap();
        let ev = p.evidence(None).unwrap();
        assert_eq!(ev.arms()[0].sample_size, Some(4));
        assert_eq!(ev.arms()[0].outcomes.probs(), [0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn explicit_resolution_overrides_the_default_search() {
        let p = ProblemFile::parse(&base("")).unwrap();
        let opts = p.allocation_options(Some(40), None).unwrap();
        assert_eq!(opts.search, GridSearch::Full { resolution: 40 });
        assert!(p.allocation_options(Some(0), None).is_err());
    }
}
