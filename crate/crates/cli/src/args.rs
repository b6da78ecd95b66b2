use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcbplan_core::baselines::{GaParams, GreedyParams, SaParams};
use dcbplan_core::flows::ExtractionParams;
use dcbplan_core::fpfs::AllocatorConfig;
use dcbplan_core::mcts::{CommitMode, SearchParams};
use dcbplan_core::proposal::ProposalParams;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "dcbplan", version, about = "Demand-capacity balancing planner and experiment runner")]
pub struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, env = "RZ_THREADS", default_value_t = 1)]
    pub threads: usize,

    /// Wall-clock budget per algorithm run; the best result so far is kept when it expires.
    #[arg(long, global = true, env = "RZ_MAX_MINUTES")]
    pub max_minutes: Option<f64>,

    /// Fill the elapsed_ms column of run logs (off by default so seeded runs are byte-identical).
    #[arg(long, global = true, env = "RZ_LOG_TIMING")]
    pub log_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scenario directory.
    Gen(GenArgs),
    /// Plan with the tree search and write plan, run log and report.
    Plan(PlanArgs),
    /// Run a baseline algorithm.
    Baseline(BaselineArgs),
    /// Compare the search against the best-proposal policy and a reduced hotspot fan-out.
    Ablate(AblateArgs),
    /// Score flows with NomRel/InLoad against brute-force rate-optimal relief.
    HeuristicStudy(StudyArgs),
    /// Re-plan across exceedance weights and write the frontier.
    Sweep(SweepArgs),
    /// Start the what-if HTTP service.
    Serve(ServeArgs),
    /// Re-evaluate a saved plan or delay table against a scenario.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ScenarioArgs {
    /// Scenario directory holding flights.csv and capacities.csv.
    #[arg(long, env = "RZ_SCENARIO", conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,

    /// Built-in synthetic scenario (default, cascade, two-flow, bandit, cascade-ordering).
    #[arg(long, env = "RZ_PRESET")]
    pub preset: Option<String>,

    /// Generator seed for --preset; defaults to the preset's shipped seed.
    #[arg(long, env = "RZ_PRESET_SEED")]
    pub preset_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
pub struct WeightArgs {
    #[arg(long, env = "RZ_W_CAP", default_value_t = 10.0)]
    pub w_cap: f64,
    #[arg(long, env = "RZ_W_DELAY", default_value_t = 1.0)]
    pub w_delay: f64,
    #[arg(long, env = "RZ_MAX_DELAY_PER_FLIGHT_MIN", default_value_t = 120)]
    pub max_delay_per_flight_min: u32,
}

impl WeightArgs {
    pub fn alloc(&self) -> AllocatorConfig {
        AllocatorConfig { max_delay_per_flight_min: self.max_delay_per_flight_min }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ProposalArgs {
    #[arg(long, env = "RZ_K_PROPOSALS_PER_HOTSPOT", default_value_t = 6)]
    pub k_proposals_per_hotspot: usize,
    #[arg(long, env = "RZ_FLOWS_THRESHOLD", default_value_t = 0.72)]
    pub flows_threshold: f64,
    #[arg(long, env = "RZ_FLOWS_RESOLUTION", default_value_t = 1.0)]
    pub flows_resolution: f64,
    #[arg(long, env = "RZ_MIN_FLIGHTS_PER_FLOW", default_value_t = 2)]
    pub min_flights_per_flow: usize,
    #[arg(long, env = "RZ_MAX_FLOWS_IN_REGULATION", default_value_t = 5)]
    pub max_flows_in_regulation: usize,
    /// Multipliers applied to the initial rate.
    #[arg(long, env = "RZ_RATE_FACTORS", value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9,1.0,1.1,1.2")]
    pub rate_factors: Vec<f64>,
    #[arg(long, env = "RZ_R_MAX", default_value_t = 1)]
    pub r_max: usize,
}

impl ProposalArgs {
    pub fn params(&self, seed: u64, parallel: bool) -> ProposalParams {
        ProposalParams {
            k_top: self.k_proposals_per_hotspot,
            max_flows_in_regulation: self.max_flows_in_regulation,
            rate_factors: self.rate_factors.clone(),
            r_max: self.r_max,
            extraction: ExtractionParams {
                similarity_threshold: self.flows_threshold,
                resolution: self.flows_resolution,
                min_flights_per_flow: self.min_flights_per_flow,
                seed,
            },
            parallel,
            ..ProposalParams::default()
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitArg {
    All,
    RecedingHorizon,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SearchArgs {
    #[arg(long, env = "RZ_SIMS", default_value_t = 128)]
    pub sims: usize,
    #[arg(long, env = "RZ_DEPTH", default_value_t = 64)]
    pub depth: usize,
    #[arg(long, env = "RZ_COMMIT_DEPTH", default_value_t = 64)]
    pub commit_depth: usize,
    #[arg(long, env = "RZ_COMMIT_MODE", value_enum, default_value_t = CommitArg::All)]
    pub commit_mode: CommitArg,
    #[arg(long, env = "RZ_PUCT_C", default_value_t = 64.0)]
    pub puct_c: f64,
    #[arg(long, env = "RZ_GAMMA", default_value_t = 0.999998)]
    pub gamma: f64,
    #[arg(long, env = "RZ_MAX_HOTSPOTS_PER_NODE", default_value_t = 20)]
    pub max_hotspots_per_node: usize,
    #[arg(long, env = "RZ_REGULATION_SELECTION_SOFTMAX_TEMPERATURE", default_value_t = 24.0)]
    pub regulation_selection_softmax_temperature: f64,
    #[arg(long, env = "RZ_HOTSPOT_SAMPLING_TEMPERATURE", default_value_t = 6.0)]
    pub hotspot_sampling_temperature: f64,
    #[command(flatten)]
    pub proposal: ProposalArgs,
}

impl SearchArgs {
    pub fn params(&self, seed: u64, budget_ms: Option<u64>, parallel: bool) -> SearchParams {
        SearchParams {
            sims: self.sims,
            depth: self.depth,
            commit_depth: self.commit_depth,
            gamma: self.gamma,
            puct_c: self.puct_c,
            tau_hotspot: self.hotspot_sampling_temperature,
            tau_proposal: self.regulation_selection_softmax_temperature,
            max_hotspots_per_node: self.max_hotspots_per_node,
            seed,
            commit_mode: match self.commit_mode {
                CommitArg::All => CommitMode::All,
                CommitArg::RecedingHorizon => CommitMode::RecedingHorizon,
            },
            time_budget_ms: budget_ms,
            proposal: self.proposal.params(seed, parallel),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenArgs {
    #[arg(long, env = "RZ_PRESET", default_value = "default")]
    pub preset: String,
    /// Generator seed; defaults to the preset's shipped seed.
    #[arg(long, env = "RZ_SEED")]
    pub seed: Option<u64>,
    /// Override the number of flights.
    #[arg(long, env = "RZ_FLIGHTS")]
    pub flights: Option<usize>,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PlanArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, env = "RZ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(subcommand)]
    pub algorithm: BaselineCommand,
}

#[derive(Subcommand, Debug)]
pub enum BaselineCommand {
    /// Simulated annealing over per-flight delays.
    Sa(SaArgs),
    /// NSGA-II over per-flight delays on (J_CAP, J_DELAY).
    Ga(GaArgs),
    /// Blanket capping of the most severe hotspot, repeated.
    Greedy(GreedyArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonRun {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, env = "RZ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SaArgs {
    #[command(flatten)]
    pub run: CommonRun,
    #[arg(long, env = "RZ_ITERS", default_value_t = 10000)]
    pub iters: usize,
    #[arg(long = "t0", env = "RZ_T0", default_value_t = 15.0)]
    pub t0: f64,
    #[arg(long, env = "RZ_COOLING", default_value_t = 0.999)]
    pub cooling: f64,
    #[arg(long = "t-min", env = "RZ_T_MIN", default_value_t = 1e-9)]
    pub t_min: f64,
    #[arg(long, env = "RZ_STEP_CHOICES", value_delimiter = ',', default_value = "2,3,4,5")]
    pub step_choices: Vec<u32>,
}

impl SaArgs {
    pub fn params(&self, budget_ms: Option<u64>) -> SaParams {
        SaParams {
            iters: self.iters,
            t0: self.t0,
            cooling: self.cooling,
            t_min: self.t_min,
            max_delay: self.run.weights.max_delay_per_flight_min,
            step_choices: self.step_choices.clone(),
            seed: self.run.seed,
            time_budget_ms: budget_ms,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GaArgs {
    #[command(flatten)]
    pub run: CommonRun,
    #[arg(long, env = "RZ_POPULATION_SIZE", default_value_t = 64)]
    pub population_size: usize,
    #[arg(long, env = "RZ_GENERATIONS", default_value_t = 80)]
    pub generations: usize,
    #[arg(long, env = "RZ_P_CROSSOVER", default_value_t = 0.9)]
    pub p_crossover: f64,
    #[arg(long, env = "RZ_MUTATIONS_PER_CHILD", default_value_t = 2)]
    pub mutations_per_child: usize,
    #[arg(long, env = "RZ_MUTATE_EXISTING_PROB", default_value_t = 0.7)]
    pub mutate_existing_prob: f64,
    #[arg(long, env = "RZ_STEP_CHOICES", value_delimiter = ',', default_value = "2,3,4,5")]
    pub step_choices: Vec<u32>,
    #[arg(long, env = "RZ_ALLOW_NEGATIVE_MOVES", default_value_t = true, action = clap::ArgAction::Set)]
    pub allow_negative_moves: bool,
    #[arg(long, env = "RZ_INIT_DELAYED_FLIGHTS_MIN", default_value_t = 1)]
    pub init_delayed_flights_min: usize,
    #[arg(long, env = "RZ_INIT_DELAYED_FLIGHTS_MAX", default_value_t = 8)]
    pub init_delayed_flights_max: usize,
}

impl GaArgs {
    pub fn params(&self, budget_ms: Option<u64>, parallel: bool) -> GaParams {
        GaParams {
            population_size: self.population_size,
            generations: self.generations,
            p_crossover: self.p_crossover,
            mutations_per_child: self.mutations_per_child,
            mutate_existing_prob: self.mutate_existing_prob,
            step_choices: self.step_choices.clone(),
            allow_negative_moves: self.allow_negative_moves,
            init_delayed_flights_min: self.init_delayed_flights_min,
            init_delayed_flights_max: self.init_delayed_flights_max,
            max_delay: self.run.weights.max_delay_per_flight_min,
            seed: self.run.seed,
            time_budget_ms: budget_ms,
            parallel,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GreedyArgs {
    #[command(flatten)]
    pub run: CommonRun,
    #[arg(long, env = "RZ_MAX_ITERATIONS", default_value_t = 200)]
    pub max_iterations: usize,
}

impl GreedyArgs {
    pub fn params(&self) -> GreedyParams {
        GreedyParams { max_iterations: self.max_iterations }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Hotspot fan-outs to compare.
    #[arg(long, env = "RZ_HOTSPOT_CAPS", value_delimiter = ',', default_value = "20,5")]
    pub hotspot_caps: Vec<usize>,
    #[arg(long, env = "RZ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StudyArgs {
    /// Scenario directory; without it, preset scenarios are generated until enough flows are found.
    #[arg(long, env = "RZ_SCENARIO", conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, env = "RZ_PRESET", default_value = "default")]
    pub preset: String,
    /// First generator seed; later scenarios use the following seeds.
    #[arg(long, env = "RZ_PRESET_SEED", default_value_t = 0)]
    pub preset_seed: u64,
    #[arg(long, env = "RZ_MIN_FLOWS", default_value_t = 500)]
    pub min_flows: usize,
    #[arg(long, env = "RZ_MAX_SCENARIOS", default_value_t = 200)]
    pub max_scenarios: usize,
    /// Largest hourly rate in the brute-force rate grid.
    #[arg(long, env = "RZ_MAX_RATE", default_value_t = 60)]
    pub max_rate: u32,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub proposal: ProposalArgs,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAlgorithm {
    Mcts,
    Brpp,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, env = "RZ_W_CAPS", value_delimiter = ',', default_value = "2,4,6,8,10")]
    pub w_caps: Vec<f64>,
    #[arg(long, env = "RZ_ALGORITHM", value_enum, default_value_t = SweepAlgorithm::Mcts)]
    pub algorithm: SweepAlgorithm,
    /// Regulation budget for brpp.
    #[arg(long, env = "RZ_BUDGET", default_value_t = 64)]
    pub budget: usize,
    #[arg(long, env = "RZ_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "RZ_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, env = "RZ_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory of dashboard assets to serve at /.
    #[arg(long, env = "RZ_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origin; repeat for several. Any origin when omitted.
    #[arg(long = "cors-origin", env = "RZ_CORS_ORIGINS", value_delimiter = ',')]
    pub cors_origins: Vec<String>,
    #[arg(long, env = "RZ_SEARCH_WORKERS", default_value_t = 1)]
    pub search_workers: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Plan JSON written by plan, baseline greedy or ablate.
    #[arg(long, env = "RZ_PLAN", conflicts_with = "delays", required_unless_present = "delays")]
    pub plan: Option<PathBuf>,
    /// Delay table written by baseline sa or ga.
    #[arg(long, env = "RZ_DELAYS")]
    pub delays: Option<PathBuf>,
    /// Also write report.json here.
    #[arg(long, env = "RZ_OUT")]
    pub out: Option<PathBuf>,
}
