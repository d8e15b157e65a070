//! Run configuration: defaults, validation, command-line flags and an
//! optional TOML file.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::MAX_LEVEL;
use crate::patch::{Layout, Limiter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Periodic brick of unit blocks.
    Brick,
    /// Six-block cubed sphere; connectivity and ghost filling only.
    CubedSphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    PatchDump,
    Vtk,
}

/// Initial tracer field, evaluated in block coordinates on bricks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialField {
    /// 1 inside any of the disks, 0 outside.
    Disks {
        centers: Vec<[f64; 2]>,
        radius: f64,
    },
    Gaussian {
        center: [f64; 2],
        sigma: f64,
    },
    Constant {
        value: f64,
    },
}

impl InitialField {
    pub fn five_disks() -> Self {
        InitialField::Disks {
            centers: vec![
                [0.5, 0.5],
                [0.25, 0.25],
                [0.75, 0.25],
                [0.25, 0.75],
                [0.75, 0.75],
            ],
            radius: 0.3,
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            InitialField::Disks { centers, radius } => {
                let inside = centers.iter().any(|c| {
                    let (dx, dy) = (x - c[0], y - c[1]);
                    dx * dx + dy * dy < radius * radius
                });
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            InitialField::Gaussian { center, sigma } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            }
            InitialField::Constant { value } => *value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub domain: Domain,
    /// Blocks in x and y for brick domains.
    pub bricks: [usize; 2],
    pub mx: usize,
    pub ghost: usize,
    pub stencil: usize,
    /// Slope limiter of the ghost interpolation and regrid transfer.
    pub limiter: LimiterChoice,
    pub advection_limiter: WaveLimiter,
    pub min_level: u8,
    pub max_level: u8,
    pub ranks: usize,
    /// Worker threads executing the simulated ranks.
    pub threads: usize,
    pub steps: usize,
    pub cfl: f64,
    /// Fixed time step; derived from `cfl` when absent.
    pub dt: Option<f64>,
    pub tag_refine: f64,
    pub tag_coarsen: f64,
    pub smooth: bool,
    pub regrid_interval: Option<usize>,
    pub uniform: bool,
    pub velocity: [f64; 2],
    pub initial: InitialField,
    pub out: Option<PathBuf>,
    pub timing: Option<PathBuf>,
    pub format: OutputFormat,
}

/// Limiter applied to the second-order correction waves of the advection
/// scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WaveLimiter {
    Minmod,
    /// Monotonized central.
    #[default]
    Mc,
    /// Unlimited (Lax-Wendroff corrections).
    None,
}

impl WaveLimiter {
    /// Limited version of `wave` given the neighboring upwind wave.
    #[inline]
    pub fn limit(self, wave: f64, upwind: f64) -> f64 {
        match self {
            WaveLimiter::None => wave,
            _ if wave == 0.0 || wave * upwind <= 0.0 => 0.0,
            WaveLimiter::Minmod => {
                if upwind.abs() < wave.abs() {
                    upwind
                } else {
                    wave
                }
            }
            WaveLimiter::Mc => {
                let theta = upwind / wave;
                (0.5 * (1.0 + theta)).min(2.0).min(2.0 * theta) * wave
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LimiterChoice {
    Minmod,
    None,
}

impl From<LimiterChoice> for Limiter {
    fn from(c: LimiterChoice) -> Self {
        match c {
            LimiterChoice::Minmod => Limiter::Minmod,
            LimiterChoice::None => Limiter::None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: Domain::Brick,
            bricks: [1, 1],
            mx: 8,
            ghost: 2,
            stencil: 3,
            limiter: LimiterChoice::Minmod,
            advection_limiter: WaveLimiter::Mc,
            min_level: 4,
            max_level: 7,
            ranks: 1,
            threads: 1,
            steps: 160,
            cfl: 0.64,
            dt: None,
            tag_refine: 0.25,
            tag_coarsen: 0.001,
            smooth: false,
            regrid_interval: None,
            uniform: false,
            velocity: [0.5, 0.5],
            initial: InitialField::five_disks(),
            out: None,
            timing: None,
            format: OutputFormat::PatchDump,
        }
    }
}

impl RunConfig {
    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.mx, self.ghost, self.stencil, self.limiter.into())
    }

    /// Level range actually used; uniform runs sit at the finest level.
    pub fn levels(&self) -> (u8, u8) {
        if self.uniform {
            (self.max_level, self.max_level)
        } else {
            (self.min_level, self.max_level)
        }
    }

    pub fn regrid_every(&self) -> usize {
        self.regrid_interval
            .unwrap_or(1 << (self.max_level - self.min_level.min(self.max_level)).min(20))
    }

    /// Finest cell width in block units.
    pub fn finest_h(&self) -> f64 {
        (-(self.max_level as f64)).exp2() / self.mx as f64
    }

    pub fn time_step(&self) -> f64 {
        self.dt.unwrap_or(self.cfl * self.finest_h())
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.min_level > self.max_level {
            return fail(format!(
                "minimum level {} exceeds maximum level {}",
                self.min_level, self.max_level
            ));
        }
        if self.max_level > MAX_LEVEL - 2 {
            return fail(format!("maximum level must not exceed {}", MAX_LEVEL - 2));
        }
        if self.ranks == 0 {
            return fail("at least one rank is required".into());
        }
        if self.threads == 0 {
            return fail("at least one thread is required".into());
        }
        if self.bricks[0] == 0 || self.bricks[1] == 0 {
            return fail("brick dimensions must be positive".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return fail(format!("CFL number {} must lie in (0, 1]", self.cfl));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return fail(format!("time step {dt} must be positive"));
            }
        }
        let (r, c) = (self.tag_refine, self.tag_coarsen);
        if r.is_nan() || c.is_nan() || r <= 0.0 || c < 0.0 {
            return fail(
                "tagging thresholds must be non-negative and the refinement threshold positive"
                    .into(),
            );
        }
        if self.tag_coarsen >= self.tag_refine {
            return fail(format!(
                "coarsening threshold {} must be below the refinement threshold {}",
                self.tag_coarsen, self.tag_refine
            ));
        }
        if self.regrid_interval == Some(0) {
            return fail("regrid interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses and validates a TOML document; missing keys keep defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses command-line arguments (program name first). Flags override
    /// values read from `--config`.
    pub fn from_args<I, T>(args: I) -> std::result::Result<Self, ArgsError>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let cli = Cli::try_parse_from(args).map_err(ArgsError::Clap)?;
        let cfg = cli.into_config().map_err(ArgsError::Config)?;
        cfg.validate().map_err(ArgsError::Config)?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub enum ArgsError {
    /// Malformed flags, `--help` or `--version`.
    Clap(clap::Error),
    Config(Error),
}

fn parse_bricks(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got {s:?}"))?;
    let n = a
        .trim()
        .parse()
        .map_err(|_| format!("bad block count {a:?}"))?;
    let m = b
        .trim()
        .parse()
        .map_err(|_| format!("bad block count {b:?}"))?;
    Ok([n, m])
}

/// Adaptive scalar advection on a forest of quadtrees.
#[derive(Parser, Debug)]
#[command(name = "quadamr", version)]
pub struct Cli {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub domain: Option<Domain>,
    /// Brick dimensions, e.g. 2x2.
    #[arg(long, value_parser = parse_bricks)]
    pub bricks: Option<[usize; 2]>,
    /// Interior cells per patch side (M).
    #[arg(long)]
    pub mx: Option<usize>,
    /// Ghost layers (m).
    #[arg(long)]
    pub ghost: Option<usize>,
    /// Interpolation stencil width (w).
    #[arg(long)]
    pub stencil: Option<usize>,
    #[arg(long, value_enum)]
    pub limiter: Option<LimiterChoice>,
    #[arg(long, value_enum)]
    pub advection_limiter: Option<WaveLimiter>,
    #[arg(long)]
    pub minlevel: Option<u8>,
    #[arg(long)]
    pub maxlevel: Option<u8>,
    /// Simulated ranks.
    #[arg(long)]
    pub ranks: Option<usize>,
    /// Threads running the simulated ranks.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cfl: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tag_refine: Option<f64>,
    #[arg(long)]
    pub tag_coarsen: Option<f64>,
    /// Grade refinement by taking the maximum target level over neighbors.
    #[arg(long)]
    pub smooth: bool,
    #[arg(long)]
    pub regrid_interval: Option<usize>,
    /// Fixed mesh at the maximum level; no regridding.
    #[arg(long)]
    pub uniform: bool,
    /// Solution output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timing CSV output file.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            domain => domain, bricks => bricks, mx => mx, ghost => ghost,
            stencil => stencil, limiter => limiter,
            advection_limiter => advection_limiter, minlevel => min_level,
            maxlevel => max_level, ranks => ranks, threads => threads,
            steps => steps, cfl => cfl, tag_refine => tag_refine,
            tag_coarsen => tag_coarsen, format => format,
        );
        if self.dt.is_some() {
            c.dt = self.dt;
        }
        if self.regrid_interval.is_some() {
            c.regrid_interval = self.regrid_interval;
        }
        if self.out.is_some() {
            c.out = self.out;
        }
        if self.timing.is_some() {
            c.timing = self.timing;
        }
        c.smooth |= self.smooth;
        c.uniform |= self.uniform;
        Ok(c)
    }
}
