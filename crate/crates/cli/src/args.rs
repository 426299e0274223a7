use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "rhflow",
    version,
    about = "Ricci flow and harmonic map flow experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the diagonal flow on Nil³.
    #[command(allow_negative_numbers = true)]
    Nil3(Nil3Args),
    /// Integrate the rescaled flow on a periodic grid.
    #[command(allow_negative_numbers = true)]
    Rrfs(RrfsArgs),
    /// Run the identity and blowdown self-checks.
    Verify(VerifyArgs),
    /// Fit asymptotics to a `t,A,B,C,Phi` CSV file.
    Fit(FitArgs),
    /// Run the `[[run]]` blocks of a TOML file concurrently.
    Run(RunArgs),
}

/// `zero`, `const:<c0>` or `power:<c0>,<r>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingArg {
    Zero,
    Const { c0: f64 },
    Power { c0: f64, r: f64 },
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("{what}: cannot parse {s:?} as a number"))
}

impl FromStr for CouplingArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "zero" {
            return Ok(Self::Zero);
        }
        if let Some(rest) = s.strip_prefix("const:") {
            return Ok(Self::Const {
                c0: parse_f64(rest, "const")?,
            });
        }
        if let Some(rest) = s.strip_prefix("power:") {
            let (c0, r) = rest
                .split_once(',')
                .ok_or_else(|| format!("expected power:<c0>,<r>, got {s:?}"))?;
            return Ok(Self::Power {
                c0: parse_f64(c0, "power c0")?,
                r: parse_f64(r, "power r")?,
            });
        }
        Err(format!(
            "expected zero, const:<c0> or power:<c0>,<r>, got {s:?}"
        ))
    }
}

/// `lo,hi`
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Window(pub f64, pub f64);

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("expected <lo>,<hi>, got {s:?}"))?;
        Ok(Self(parse_f64(lo, "window")?, parse_f64(hi, "window")?))
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct IntegratorArgs {
    #[arg(long, default_value_t = 1e-9)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub atol: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct Nil3Args {
    #[arg(long = "A0", default_value_t = 1.0)]
    #[serde(rename = "A0")]
    pub a0: f64,
    #[arg(long = "B0", default_value_t = 1.0)]
    #[serde(rename = "B0")]
    pub b0: f64,
    #[arg(long = "C0", default_value_t = 1.0)]
    #[serde(rename = "C0")]
    pub c0: f64,
    /// Slope `a` of the harmonic map.
    #[arg(long = "a", default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value = "zero")]
    pub coupling: CouplingArg,
    #[arg(long, default_value_t = 1e4)]
    pub t_end: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long, default_value_t = 32)]
    pub samples_per_decade: usize,
    /// Fit window `lo,hi`; defaults to the last two decades.
    #[arg(long)]
    pub window: Option<Window>,
    /// Largest accepted `|BC/Φ₀ - 1|`.
    #[arg(long, default_value_t = 1e-8)]
    pub phi_tol: f64,
    /// Largest accepted relative error against the closed form (when `A0 = B0`, zero coupling).
    #[arg(long, default_value_t = 1e-6)]
    pub oracle_tol: f64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary path; stdout when absent.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Seeded smooth random fields.
    Random,
    /// Flat metric, zero connection, identity fiber metric.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    /// All three equations.
    Full,
    /// Only the fiber metric evolves.
    Hmf,
}

/// `off`, `volume` or `const:<s>`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RescalingArg {
    Off,
    Volume,
    Const { s: f64 },
}

impl FromStr for RescalingArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(Self::Off),
            "volume" => Ok(Self::Volume),
            _ => match s.strip_prefix("const:") {
                Some(v) => Ok(Self::Const {
                    s: parse_f64(v, "rescaling")?,
                }),
                None => Err(format!("expected off, volume or const:<s>, got {s:?}")),
            },
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct RrfsArgs {
    /// Base dimension (1 or 2).
    #[arg(long = "n", default_value_t = 1)]
    pub n: usize,
    /// Fiber dimension.
    #[arg(long = "N", default_value_t = 2)]
    #[serde(rename = "N")]
    pub fiber_dim: usize,
    /// Points per axis.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    pub period: f64,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    pub init: InitKind,
    /// Start from a snapshot file instead of `--init`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub modes: usize,
    #[arg(long, default_value_t = 0.4)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.15)]
    pub metric_amplitude: f64,
    #[arg(long, default_value_t = 0.3)]
    pub connection_amplitude: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, default_value = "off")]
    pub rescaling: RescalingArg,
    /// The constant `c` in the connection and fiber equations.
    #[arg(long, default_value_t = 0.0)]
    pub c_coupling: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub integrator: IntegratorArgs,
    /// Comma-separated snapshot times; start and end are always included.
    #[arg(long, value_delimiter = ',')]
    pub snapshot_times: Vec<f64>,
    /// Directory for `snapshot_<k>.txt` files.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    /// Largest accepted relative volume drift in volume mode.
    #[arg(long, default_value_t = 1e-6)]
    pub volume_tol: f64,
    /// Diagnostics CSV `t,energy,volume,s`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Tension,
    Blowdown,
    All,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = CheckKind::All)]
    pub check: CheckKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "N", default_value_t = 2)]
    #[serde(rename = "N")]
    pub fiber_dim: usize,
    #[arg(long = "n", default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    /// Blowdown factors.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub s: Vec<f64>,
    #[arg(long, default_value_t = 1e4)]
    pub t_end: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long, default_value_t = 1e-10)]
    pub tension_tol: f64,
    /// Flip the sign of the target Christoffel symbol (mutation check).
    #[arg(long, hide = true)]
    pub corrupt_christoffel: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `Q ~ p t^e`
    Power,
    /// `Q² ~ κ log t`
    LogGrowth,
    /// `Q ~ p / sqrt(log t)`
    LogDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ComponentArg {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
    #[value(name = "C")]
    C,
    #[value(name = "all")]
    #[serde(rename = "all")]
    All,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FitArgs {
    /// Input CSV with header `t,A,B,C,Phi`.
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub window: Option<Window>,
    #[arg(long, value_enum, default_value_t = FitKind::Power)]
    pub kind: FitKind,
    #[arg(long, value_enum, default_value_t = ComponentArg::All)]
    pub component: ComponentArg,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_grammar() {
        assert_eq!("zero".parse::<CouplingArg>(), Ok(CouplingArg::Zero));
        assert_eq!(
            "const:0.5".parse::<CouplingArg>(),
            Ok(CouplingArg::Const { c0: 0.5 })
        );
        assert_eq!(
            "power:1,2.5".parse::<CouplingArg>(),
            Ok(CouplingArg::Power { c0: 1.0, r: 2.5 })
        );
        for bad in ["", "const:", "power:1", "power:a,1", "linear:1"] {
            assert!(bad.parse::<CouplingArg>().is_err(), "{bad}");
        }
    }

    #[test]
    fn rescaling_and_window_grammar() {
        assert_eq!("volume".parse::<RescalingArg>(), Ok(RescalingArg::Volume));
        assert_eq!(
            "const:-0.25".parse::<RescalingArg>(),
            Ok(RescalingArg::Const { s: -0.25 })
        );
        assert!("on".parse::<RescalingArg>().is_err());
        assert_eq!("1e6,1e8".parse::<Window>(), Ok(Window(1e6, 1e8)));
        assert!("1e6".parse::<Window>().is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
