//! Run configuration as plain `key = value` text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::crf::CrfParams;
use crate::descriptors::RankParams;
use crate::error::{Error, Result};
use crate::features::KernelParams;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub out: PathBuf,
    /// Palette CSV; defaults to `palette.csv` beside the training manifest.
    pub palette: Option<PathBuf>,
    /// 0 takes the class count from the palette.
    pub num_classes: usize,
    pub cell: usize,
    pub cap: usize,
    pub sigma_d_sample: f64,
    pub seed: u64,
    pub no_crf: bool,
    pub ideal_ranking: bool,
    pub descriptor_cache: Option<PathBuf>,
    /// Write per-query sample and score CSVs next to the label maps.
    pub debug_dumps: bool,
    /// Refinement passes for the transfer lattices; 0 is the plain lattice.
    pub lattice_refine_passes: usize,
    pub kernel: KernelParams,
    pub crf: CrfParams,
    pub rank: RankParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: None,
            query: None,
            out: PathBuf::from("out"),
            palette: None,
            num_classes: 0,
            cell: 16,
            cap: 2500,
            sigma_d_sample: 0.5,
            seed: 0,
            no_crf: false,
            ideal_ranking: false,
            descriptor_cache: None,
            debug_dumps: false,
            lattice_refine_passes: 0,
            kernel: KernelParams::default(),
            crf: CrfParams::default(),
            rank: RankParams::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidParam(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidParam(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "train" => self.train = opt_path(v),
            "query" => self.query = opt_path(v),
            "out" => self.out = PathBuf::from(v),
            "palette" => self.palette = opt_path(v),
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "cell" => self.cell = parse_num(key, v)?,
            "cap" => self.cap = parse_num(key, v)?,
            "sigma_d_sample" => self.sigma_d_sample = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "no_crf" => self.no_crf = parse_bool(key, v)?,
            "ideal_ranking" => self.ideal_ranking = parse_bool(key, v)?,
            "descriptor_cache" => self.descriptor_cache = opt_path(v),
            "debug_dumps" => self.debug_dumps = parse_bool(key, v)?,
            "lattice.refine_passes" => self.lattice_refine_passes = parse_num(key, v)?,
            "kernel.sigma_c" => self.kernel.sigma_c = parse_num(key, v)?,
            "kernel.sigma_t" => self.kernel.sigma_t = parse_num(key, v)?,
            "kernel.sigma_s" => self.kernel.sigma_s = parse_num(key, v)?,
            "kernel.sigma_d" => self.kernel.sigma_d = parse_num(key, v)?,
            "kernel.sigma_h" => self.kernel.sigma_h = parse_num(key, v)?,
            "kernel.w1" => self.kernel.w1 = parse_num(key, v)?,
            "kernel.w2" => self.kernel.w2 = parse_num(key, v)?,
            "crf.iterations" => self.crf.iterations = parse_num(key, v)?,
            "crf.sigma_alpha" => self.crf.sigma_alpha = parse_num(key, v)?,
            "crf.sigma_beta" => self.crf.sigma_beta = parse_num(key, v)?,
            "crf.w_app" => self.crf.w_app = parse_num(key, v)?,
            "crf.sigma_gamma" => self.crf.sigma_gamma = parse_num(key, v)?,
            "crf.w_smooth" => self.crf.w_smooth = parse_num(key, v)?,
            "crf.w_loc" => self.crf.w_loc = parse_num(key, v)?,
            "crf.prior_k" => self.crf.prior_k = parse_num(key, v)?,
            "rank.pyramid_levels" => self.rank.pyramid_levels = parse_num(key, v)?,
            "rank.color_bins" => self.rank.color_bins = parse_num(key, v)?,
            "rank.gist_grid" => self.rank.gist_grid = parse_num(key, v)?,
            "rank.gist_orientations" => self.rank.gist_orientations = parse_num(key, v)?,
            "rank.hog_orientations" => self.rank.hog_orientations = parse_num(key, v)?,
            other => return Err(Error::InvalidParam(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidParam(format!("expected key=value, got `{pair}`")))?;
        self.set(k, v)
    }

    /// Parses configuration text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_pair(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn dump(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("train", path(&self.train));
        kv("query", path(&self.query));
        kv("out", self.out.display().to_string());
        kv("palette", path(&self.palette));
        kv("num_classes", self.num_classes.to_string());
        kv("cell", self.cell.to_string());
        kv("cap", self.cap.to_string());
        kv("sigma_d_sample", self.sigma_d_sample.to_string());
        kv("seed", self.seed.to_string());
        kv("no_crf", self.no_crf.to_string());
        kv("ideal_ranking", self.ideal_ranking.to_string());
        kv("descriptor_cache", path(&self.descriptor_cache));
        kv("debug_dumps", self.debug_dumps.to_string());
        kv("lattice.refine_passes", self.lattice_refine_passes.to_string());
        let k = &self.kernel;
        kv("kernel.sigma_c", k.sigma_c.to_string());
        kv("kernel.sigma_t", k.sigma_t.to_string());
        kv("kernel.sigma_s", k.sigma_s.to_string());
        kv("kernel.sigma_d", k.sigma_d.to_string());
        kv("kernel.sigma_h", k.sigma_h.to_string());
        kv("kernel.w1", k.w1.to_string());
        kv("kernel.w2", k.w2.to_string());
        let c = &self.crf;
        kv("crf.iterations", c.iterations.to_string());
        kv("crf.sigma_alpha", c.sigma_alpha.to_string());
        kv("crf.sigma_beta", c.sigma_beta.to_string());
        kv("crf.w_app", c.w_app.to_string());
        kv("crf.sigma_gamma", c.sigma_gamma.to_string());
        kv("crf.w_smooth", c.w_smooth.to_string());
        kv("crf.w_loc", c.w_loc.to_string());
        kv("crf.prior_k", c.prior_k.to_string());
        let r = &self.rank;
        kv("rank.pyramid_levels", r.pyramid_levels.to_string());
        kv("rank.color_bins", r.color_bins.to_string());
        kv("rank.gist_grid", r.gist_grid.to_string());
        kv("rank.gist_orientations", r.gist_orientations.to_string());
        kv("rank.hog_orientations", r.hog_orientations.to_string());
        out
    }

    /// Range checks on every parameter; paths are checked when used.
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.crf.validate()?;
        if self.cell == 0 {
            return Err(Error::InvalidParam("cell must be at least 1".into()));
        }
        if self.cap == 0 {
            return Err(Error::InvalidParam("cap must be at least 1".into()));
        }
        if !(self.sigma_d_sample.is_finite() && self.sigma_d_sample > 0.0) {
            return Err(Error::InvalidParam(format!("sigma_d_sample must be positive, got {}", self.sigma_d_sample)));
        }
        if self.num_classes > 255 {
            return Err(Error::InvalidParam("at most 255 classes (255 marks VOID)".into()));
        }
        let r = &self.rank;
        if [r.pyramid_levels, r.color_bins, r.gist_grid, r.gist_orientations, r.hog_orientations].contains(&0) {
            return Err(Error::InvalidParam("rank.* parameters must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set_pair("kernel.sigma_c=33.5").unwrap();
        cfg.set_pair("no_crf = true").unwrap();
        cfg.set_pair("train=data/train.txt").unwrap();
        let back = RunConfig::parse(&cfg.dump(), Path::new("x.cfg")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().dump(), Path::new("d")).unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_are_listed() {
        let text = RunConfig::default().dump();
        for key in ["cap = 2500", "sigma_d_sample = 0.5", "kernel.sigma_c = 20", "crf.sigma_alpha = 60", "crf.prior_k = 15", "cell = 16"] {
            assert!(text.contains(key), "{key}");
        }
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# header\ncap = 10 # trailing\n\n", Path::new("c")).unwrap();
        assert_eq!(cfg.cap, 10);
        let err = RunConfig::parse("cap = 1\nbogus = 2\n", Path::new("c.cfg")).unwrap_err();
        assert!(err.to_string().contains("c.cfg:2"), "{err}");
        assert!(RunConfig::parse("cap = many", Path::new("c")).is_err());
        assert!(RunConfig::parse("no_crf = maybe", Path::new("c")).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig { sigma_d_sample: 0.0, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let mut bad = RunConfig::default();
        bad.crf.iterations = 0;
        assert!(bad.validate().is_err());
    }
}
