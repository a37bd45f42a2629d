//! Run configuration: problem, preconditioner, solver and output blocks.

use std::path::{Path, PathBuf};

use qpkron::coefficients::{
    make_modulated, make_periodic_bumps, make_periodic_two_level, make_piecewise, SeparableCoefficient,
    SeparableFunction, SeparableRhs, UniformGrid, UnivariateFactor,
};
use qpkron::kron_fem::MassTreatment;
use qpkron::lowrank::TruncationPolicy;
use qpkron::operator_bounds::{
    homogenized_coefficient, optimal_piecewise_constants, ratio_bounds, Subdomain, TwoSubdomainSetup,
};
use qpkron::problem::DiscreteProblem;
use qpkron::solver::{PreconditionerKind, RhoChoice, SolveConfig, StopRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub preconditioner: PreconditionerBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub sincplot: SincplotBlock,
    /// Seed of the random initial iterate.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub dimension: usize,
    /// Interior nodes per dimension; a single entry is repeated.
    pub sizes: Vec<usize>,
    pub coefficient: CoefficientSpec,
    #[serde(default = "default_rhs")]
    pub rhs: RhsSpec,
    #[serde(default)]
    pub mass: MassTreatment,
}

fn default_rhs() -> RhsSpec {
    RhsSpec::Constant { value: 1.0 }
}

/// Oscillating coefficient `a`. One-dimensional factors are repeated over every dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    TwoLevel {
        cells: usize,
        low: f64,
        high: f64,
        upper_fraction: f64,
        #[serde(default)]
        start: Option<f64>,
        #[serde(default)]
        end: Option<f64>,
        #[serde(default)]
        outside: Option<f64>,
    },
    /// `g(x)(1 + ε sin(2π k x))`.
    Modulated {
        mean: UnivariateFactor<f64>,
        epsilon: f64,
        frequency: u32,
    },
    /// `C + a₁(x₁)a₁(x₂)` with periodic bumps; two dimensions only.
    Bumps {
        cells: usize,
        height: f64,
        support: f64,
        base: f64,
    },
    TwoSubdomain {
        setup: TwoSubdomainSetup<f64>,
    },
    /// Piecewise-linear samples read from a two-column CSV file `x,value`.
    Sampled {
        file: PathBuf,
    },
    Separable {
        terms: Vec<Vec<UnivariateFactor<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    Constant { value: f64 },
    Product { factors: Vec<UnivariateFactor<f64>> },
    Separable { terms: Vec<Vec<UnivariateFactor<f64>>> },
}

/// Preconditioning coefficient `a∘`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum A0Spec {
    /// A constant; when omitted, `√(a⊖ a⊕)`.
    Constant {
        #[serde(default)]
        value: Option<f64>,
    },
    /// The mean `g` of a modulated coefficient.
    MeanFunction,
    /// Piecewise constants on the subdomains cut at `breakpoints`; optimal ones when `values` is omitted.
    Piecewise {
        breakpoints: Vec<f64>,
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    /// Harmonic mean of `a` on each subdomain; one dimension only.
    Homogenized {
        breakpoints: Vec<f64>,
    },
    Separable {
        terms: Vec<Vec<UnivariateFactor<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionerBlock {
    pub a0: A0Spec,
    /// Number `M` of sinc nodes on each side; exact inverse when omitted.
    #[serde(default)]
    pub sinc_m: Option<usize>,
}

impl Default for PreconditionerBlock {
    fn default() -> Self {
        Self {
            a0: A0Spec::Constant { value: None },
            sinc_m: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    FixedPoint,
    Pcg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    #[default]
    Residual,
    OstrowskiGap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialIterate {
    /// `Λ∘⁻¹f`.
    #[default]
    Preconditioned,
    Zero,
    /// Uniform random entries in `[−1, 1]` drawn from the run seed.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub method: Method,
    /// Relaxation parameter; `ρ*` when omitted.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub stop: StopKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub truncation_tol: Option<f64>,
    #[serde(default)]
    pub max_rank: Option<usize>,
    #[serde(default)]
    pub certificates: bool,
    #[serde(default)]
    pub flux_cells: Option<[usize; 2]>,
    /// Compare iterates with the direct solution.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub initial: InitialIterate,
}

fn default_max_iterations() -> usize {
    100
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            method: Method::FixedPoint,
            rho: None,
            max_iterations: default_max_iterations(),
            stop: StopKind::Residual,
            tol: default_tol(),
            truncation_tol: None,
            max_rank: None,
            certificates: false,
            flux_cells: None,
            oracle: false,
            initial: InitialIterate::Preconditioned,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Directory for output files; standard output when omitted.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also write the solution factors as CSV.
    #[serde(default)]
    pub solution_csv: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SincplotBlock {
    pub m_values: Vec<usize>,
}

impl Default for SincplotBlock {
    fn default() -> Self {
        Self {
            m_values: (4..=64).collect(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Makes file references relative to `base` absolute.
    fn resolve_paths(mut self, base: &Path) -> CliResult<Self> {
        if let CoefficientSpec::Sampled { file } = &mut self.problem.coefficient {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        let p = &self.problem;
        if !(1..=2).contains(&p.dimension) {
            return Err(CliError::Config(format!(
                "dimension must be 1 or 2, got {}",
                p.dimension
            )));
        }
        if p.sizes.is_empty() || (p.sizes.len() != 1 && p.sizes.len() != p.dimension) {
            return Err(CliError::Config(format!(
                "sizes needs 1 or {} entries, got {}",
                p.dimension,
                p.sizes.len()
            )));
        }
        if p.sizes.contains(&0) {
            return Err(CliError::Config("sizes must be positive".into()));
        }
        if let CoefficientSpec::Sampled { file } = &p.coefficient {
            if !file.is_file() {
                return Err(CliError::Config(format!(
                    "coefficient file {} does not exist",
                    file.display()
                )));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(CliError::Config("solver.tol must be positive".into()));
        }
        if s.truncation_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(CliError::Config("solver.truncation_tol must be positive".into()));
        }
        if s.rho.is_some_and(|r| !(r > 0.0)) {
            return Err(CliError::Config("solver.rho must be positive".into()));
        }
        if self.preconditioner.sinc_m == Some(0) {
            return Err(CliError::Config("preconditioner.sinc_m must be at least 1".into()));
        }
        if self.sincplot.m_values.contains(&0) {
            return Err(CliError::Config("sincplot.m_values must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> CliResult<UniformGrid> {
        let p = &self.problem;
        let sizes = if p.sizes.len() == 1 {
            vec![p.sizes[0]; p.dimension]
        } else {
            p.sizes.clone()
        };
        Ok(UniformGrid::new(sizes)?)
    }

    pub fn coefficient(&self) -> CliResult<SeparableCoefficient<f64>> {
        let d = self.problem.dimension;
        let repeat = |u: UnivariateFactor<f64>| SeparableCoefficient::product(vec![u; d]);
        Ok(match &self.problem.coefficient {
            CoefficientSpec::Constant { value } => SeparableCoefficient::constant(d, *value)?,
            CoefficientSpec::Piecewise { breakpoints, values } => {
                repeat(make_piecewise(breakpoints.clone(), values.clone())?)?
            }
            CoefficientSpec::TwoLevel {
                cells,
                low,
                high,
                upper_fraction,
                start,
                end,
                outside,
            } => repeat(make_periodic_two_level(
                *cells,
                *low,
                *high,
                *upper_fraction,
                start.unwrap_or(0.0),
                end.unwrap_or(1.0),
                outside.unwrap_or(1.0),
            )?)?,
            CoefficientSpec::Modulated {
                mean,
                epsilon,
                frequency,
            } => {
                if d != 1 {
                    return Err(CliError::Config("modulated coefficients are one-dimensional".into()));
                }
                make_modulated(mean.clone(), *epsilon, *frequency)?
            }
            CoefficientSpec::Bumps {
                cells,
                height,
                support,
                base,
            } => {
                if d != 2 {
                    return Err(CliError::Config("bump coefficients are two-dimensional".into()));
                }
                make_periodic_bumps(*cells, *height, *support, *base)?
            }
            CoefficientSpec::TwoSubdomain { setup } => {
                if d != 1 {
                    return Err(CliError::Config("two-subdomain setups are one-dimensional".into()));
                }
                SeparableCoefficient::product(vec![setup.coefficient()?])?
            }
            CoefficientSpec::Sampled { file } => repeat(read_samples(file)?)?,
            CoefficientSpec::Separable { terms } => {
                SeparableCoefficient::new(SeparableFunction::new(d, terms.clone())?)?
            }
        })
    }

    pub fn rhs(&self) -> CliResult<SeparableRhs<f64>> {
        let d = self.problem.dimension;
        Ok(match &self.problem.rhs {
            RhsSpec::Constant { value } => SeparableRhs::new(SeparableFunction::constant(d, *value)),
            RhsSpec::Product { factors } => {
                let factors = if factors.len() == 1 {
                    vec![factors[0].clone(); d]
                } else {
                    factors.clone()
                };
                SeparableRhs::product(factors)?
            }
            RhsSpec::Separable { terms } => SeparableRhs::new(SeparableFunction::new(d, terms.clone())?),
        })
    }

    pub fn preconditioning_coefficient(&self, a: &SeparableCoefficient<f64>) -> CliResult<SeparableCoefficient<f64>> {
        let d = self.problem.dimension;
        let probe =
            qpkron::coefficients::ProbeGrid::for_function(a.function(), qpkron::coefficients::default_probe_points(d));
        Ok(match &self.preconditioner.a0 {
            A0Spec::Constant { value: Some(v) } => SeparableCoefficient::constant(d, *v)?,
            A0Spec::Constant { value: None } => {
                let one = SeparableFunction::constant(d, 1.0);
                let (lo, hi) = ratio_bounds(a.function(), &one, &probe)?;
                SeparableCoefficient::constant(d, (lo * hi).sqrt())?
            }
            A0Spec::MeanFunction => match &self.problem.coefficient {
                CoefficientSpec::Modulated { mean, .. } => SeparableCoefficient::product(vec![mean.clone()])?,
                _ => {
                    return Err(CliError::Config(
                        "a0 kind mean_function needs a modulated coefficient".into(),
                    ))
                }
            },
            A0Spec::Piecewise { breakpoints, values } => {
                let values = match values {
                    Some(v) => v.clone(),
                    None => {
                        if d != 1 {
                            return Err(CliError::Config(
                                "optimal piecewise a0 is available in one dimension only; give values".into(),
                            ));
                        }
                        let parts = intervals(breakpoints)?;
                        let subs: Vec<Subdomain<f64>> =
                            parts.iter().map(|(lo, hi)| Subdomain::interval(*lo, *hi)).collect();
                        optimal_piecewise_constants(a.function(), &subs, &probe)?.constants
                    }
                };
                SeparableCoefficient::product(vec![make_piecewise(breakpoints.clone(), values)?; d])?
            }
            A0Spec::Homogenized { breakpoints } => {
                if d != 1 || a.rank() != 1 {
                    return Err(CliError::Config(
                        "homogenized a0 needs a one-dimensional rank-one coefficient".into(),
                    ));
                }
                let factor = a.function().factor(0, 0);
                let values = intervals(breakpoints)?
                    .into_iter()
                    .map(|iv| homogenized_coefficient(factor, iv))
                    .collect::<qpkron::Result<Vec<f64>>>()?;
                SeparableCoefficient::product(vec![make_piecewise(breakpoints.clone(), values)?])?
            }
            A0Spec::Separable { terms } => SeparableCoefficient::new(SeparableFunction::new(d, terms.clone())?)?,
        })
    }

    pub fn build_problem(&self) -> CliResult<DiscreteProblem<f64>> {
        let a = self.coefficient()?;
        let a0 = self.preconditioning_coefficient(&a)?;
        Ok(DiscreteProblem::new(
            self.grid()?,
            a,
            a0,
            self.rhs()?,
            self.problem.mass,
        )?)
    }

    pub fn solve_config(&self) -> SolveConfig<f64> {
        let s = &self.solver;
        SolveConfig {
            rho: s.rho.map_or(RhoChoice::Auto, RhoChoice::Fixed),
            max_iterations: s.max_iterations,
            stop: match s.stop {
                StopKind::Residual => StopRule::Residual { tol: s.tol },
                StopKind::OstrowskiGap => StopRule::OstrowskiGap { tol: s.tol },
            },
            truncation: self.truncation(),
            preconditioner: self.preconditioner_kind(),
            certificates: s.certificates,
            flux_cells: s.flux_cells,
        }
    }

    pub fn truncation(&self) -> Option<TruncationPolicy<f64>> {
        match (self.solver.truncation_tol, self.solver.max_rank) {
            (None, None) => None,
            (Some(t), None) => Some(TruncationPolicy::tolerance(t)),
            (None, Some(r)) => Some(TruncationPolicy::rank(r)),
            (Some(t), Some(r)) => Some(TruncationPolicy::both(t, r)),
        }
    }

    pub fn preconditioner_kind(&self) -> PreconditionerKind {
        self.preconditioner
            .sinc_m
            .map_or(PreconditionerKind::Exact, |m| PreconditionerKind::Sinc { m })
    }
}

/// Consecutive intervals of `[0, 1]` cut at `breakpoints`.
fn intervals(breakpoints: &[f64]) -> CliResult<Vec<(f64, f64)>> {
    let mut cuts = vec![0.0];
    cuts.extend_from_slice(breakpoints);
    cuts.push(1.0);
    if cuts.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Config("breakpoints must be increasing inside (0, 1)".into()));
    }
    Ok(cuts.windows(2).map(|w| (w[0], w[1])).collect())
}

fn read_samples(path: &Path) -> CliResult<UnivariateFactor<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for (i, row) in reader.deserialize::<(f64, f64)>().enumerate() {
        let (x, v) = row.map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
        nodes.push(x);
        values.push(v);
    }
    let ok = nodes.len() >= 2
        && nodes.windows(2).all(|w| w[0] < w[1])
        && nodes.first() == Some(&0.0)
        && nodes.last() == Some(&1.0)
        && values.iter().all(|v| *v > 0.0);
    if !ok {
        return Err(CliError::Config(format!(
            "{}: samples need increasing nodes from 0 to 1 and positive values",
            path.display()
        )));
    }
    Ok(UnivariateFactor::Sampled { nodes, values })
}
