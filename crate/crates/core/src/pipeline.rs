//! End-to-end parsing of a query set against a training set.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::crf::{location_prior, meanfield, pixel_unary, PixelMarginals};
use crate::dataset::{load_dataset_with, Dataset, Entry};
use crate::descriptors::{
    compute_all, load_descriptor_cache, rank_by_descriptors, rank_images_ideal, save_descriptor_cache,
    GlobalDescriptors, Ranking,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::{superpixel_features, FeatureRecord};
use crate::image::{save_pgm, save_png, LabelMap};
use crate::lattice::FilterOptions;
use crate::palette::{render_labelmap, Palette};
use crate::sampler::{assign_dissimilarity, sample_balanced, SampleSet};
use crate::superpixel::{GridPartitioner, SuperpixelPartition};
use crate::transfer::{transfer_with, LabelScores};

/// Everything produced for one query.
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub name: String,
    /// Final labels: CRF output, or the transfer labels with the CRF off.
    pub labels: LabelMap,
    /// Superpixel argmax of the transfer scores, broadcast to pixels.
    pub transfer_labels: LabelMap,
    pub ranking: Ranking,
    pub sample: SampleSet,
    pub scores: LabelScores,
    pub marginals: Option<PixelMarginals>,
    pub timings: Vec<(String, f64)>,
}

/// Copies each superpixel's label to its pixels.
pub fn broadcast_labels(partition: &SuperpixelPartition, labels: &[u8], num_classes: usize) -> Result<LabelMap> {
    if labels.len() != partition.count() {
        return Err(Error::Dimension(format!(
            "{} labels for {} superpixels",
            labels.len(),
            partition.count()
        )));
    }
    let pixels = partition.assignment().iter().map(|&s| labels[s as usize]).collect();
    LabelMap::new(partition.width(), partition.height(), pixels, num_classes)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// A training set prepared for parsing: descriptors and superpixel features
/// are computed once and shared by every query.
pub struct Pipeline<'a> {
    config: RunConfig,
    train: &'a Dataset,
    descriptors: Option<Vec<GlobalDescriptors>>,
    features: Vec<Vec<FeatureRecord>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &RunConfig, train: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("training set has no images".into()));
        }
        let descriptors = if config.ideal_ranking { None } else { Some(train_descriptors(config, train)?) };
        let features = train
            .entries
            .par_iter()
            .map(|e| superpixel_features(&e.image, &e.partition, 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), train, descriptors, features })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Ranks the training set against `query`, by descriptors or, in ideal
    /// mode, by ground-truth class histograms.
    pub fn rank(&self, query: &Entry) -> Result<Ranking> {
        match &self.descriptors {
            None => {
                let labels = query.labels.as_ref().ok_or_else(|| {
                    Error::InvalidParam(format!("{}: ideal ranking needs a ground-truth label map", query.name))
                })?;
                rank_images_ideal(labels, self.train)
            }
            Some(train) => {
                rank_by_descriptors(&GlobalDescriptors::compute(&query.image, &self.config.rank)?, train)
            }
        }
    }

    /// Parses one query. `seed` drives the sampling stage.
    pub fn parse(&self, query: &Entry, seed: u64) -> Result<QueryOutput> {
        let t = Instant::now();
        let ranking = self.rank(query)?;
        let rank_ms = elapsed_ms(t);
        let mut out = self.parse_ranked(query, ranking, seed)?;
        out.timings.insert(0, ("rank".to_string(), rank_ms));
        Ok(out)
    }

    /// Every stage after ranking, with the ranking supplied.
    pub fn parse_ranked(&self, query: &Entry, ranking: Ranking, seed: u64) -> Result<QueryOutput> {
        let cfg = &self.config;
        let l = self.train.num_classes;
        if ranking.len() != self.train.len() {
            return Err(Error::Dimension(format!(
                "ranking covers {} images, training set has {}",
                ranking.len(),
                self.train.len()
            )));
        }
        let mut timings = Vec::new();
        let mut stage = |name: &str, t: Instant| timings.push((name.to_string(), elapsed_ms(t)));

        let t = Instant::now();
        let scores = assign_dissimilarity(&ranking, self.train)?.with_scores(cfg.sigma_d_sample)?;
        let mut sample = sample_balanced(&scores, cfg.cap, seed)?;
        if sample.is_empty() {
            return Err(Error::Empty("training set has no labeled superpixels".into()));
        }
        sample.attach_features(&self.features)?;
        stage("sample", t);

        let t = Instant::now();
        let query_features = superpixel_features(&query.image, &query.partition, 0.0)?;
        stage("features", t);

        let t = Instant::now();
        let opts = FilterOptions { refine_passes: cfg.lattice_refine_passes, ..FilterOptions::default() };
        let label_scores = transfer_with(&sample, &query_features, &cfg.kernel, opts)?;
        let transfer_labels = broadcast_labels(&query.partition, &label_scores.argmax(), l)?;
        stage("transfer", t);

        let (labels, marginals) = if cfg.no_crf {
            (transfer_labels.clone(), None)
        } else {
            let t = Instant::now();
            let (w, h) = (query.image.width(), query.image.height());
            let prior = location_prior(&ranking, self.train, w, h, cfg.crf.prior_k)?;
            let costs = pixel_unary(&label_scores, &query.partition, &prior, cfg.crf.w_loc)?;
            stage("prior", t);
            let t = Instant::now();
            let (marginals, labels) = meanfield(&costs, &query.image, &cfg.crf)?;
            stage("crf", t);
            (labels, Some(marginals))
        };

        Ok(QueryOutput {
            name: query.name.clone(),
            labels,
            transfer_labels,
            ranking,
            sample,
            scores: label_scores,
            marginals,
            timings,
        })
    }

    /// Parses every query in parallel; results keep the query order.
    pub fn parse_all(&self, queries: &Dataset) -> Vec<Result<QueryOutput>> {
        queries
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, q)| self.parse(q, self.config.seed.wrapping_add(i as u64)))
            .collect()
    }
}

fn train_descriptors(config: &RunConfig, train: &Dataset) -> Result<Vec<GlobalDescriptors>> {
    if let Some(path) = &config.descriptor_cache {
        if path.exists() {
            let flat = load_descriptor_cache(path)?;
            if flat.len() == 3 * train.len() {
                return Ok(flat
                    .chunks_exact(3)
                    .map(|c| GlobalDescriptors { color: c[0].clone(), gist: c[1].clone(), hog: c[2].clone() })
                    .collect());
            }
            log::warn!("{}: cache holds {} descriptors, expected {}; recomputing", path.display(), flat.len(), 3 * train.len());
        }
    }
    let images: Vec<_> = train.entries.iter().map(|e| &e.image).collect();
    let descriptors = compute_all(&images, &config.rank)?;
    if let Some(path) = &config.descriptor_cache {
        let flat: Vec<_> =
            descriptors.iter().flat_map(|d| [d.color.clone(), d.gist.clone(), d.hog.clone()]).collect();
        save_descriptor_cache(path, &flat)?;
    }
    Ok(descriptors)
}

/// Resolves the palette and class count a config refers to.
pub fn resolve_palette(config: &RunConfig) -> Result<(Palette, usize)> {
    let path = config
        .palette
        .clone()
        .or_else(|| config.train.as_ref().and_then(|t| t.parent()).map(|d| d.join("palette.csv")));
    let palette = match path {
        Some(p) if p.exists() || config.palette.is_some() => Some(Palette::load(&p)?),
        _ => None,
    };
    let num_classes = match (config.num_classes, &palette) {
        (0, Some(p)) => p.len(),
        (0, None) => {
            return Err(Error::InvalidParam(
                "num_classes is not set and no palette was found to infer it from".into(),
            ))
        }
        (n, _) => n,
    };
    Ok((palette.unwrap_or_else(|| Palette::default_for(num_classes)), num_classes))
}

/// Loads the training and query sets named in `config`.
pub fn load_sets(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let train_path = config.train.as_ref().ok_or_else(|| Error::InvalidParam("no training manifest given".into()))?;
    let query_path = config.query.as_ref().ok_or_else(|| Error::InvalidParam("no query manifest given".into()))?;
    let (palette, l) = resolve_palette(config)?;
    let grid = GridPartitioner::new(config.cell)?;
    let train = load_dataset_with(train_path, &grid, l, Some(palette.clone()))?;
    let queries = load_dataset_with(query_path, &grid, l, Some(palette))?;
    Ok((train, queries))
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: EvalReport,
    /// Query name and error message for every query that failed.
    pub failures: Vec<(String, String)>,
    pub outputs: Vec<PathBuf>,
}

fn write_outputs(out: &QueryOutput, palette: &Palette, dir: &Path, dumps: bool) -> Result<Vec<PathBuf>> {
    let raw = dir.join(format!("{}_labels.pgm", out.name));
    let rendered = dir.join(format!("{}_labels.png", out.name));
    save_pgm(&out.labels, &raw)?;
    save_png(&render_labelmap(&out.labels, palette)?, &rendered)?;
    let mut paths = vec![raw, rendered];
    if dumps {
        for (suffix, text) in [("sample", out.sample.to_csv()), ("scores", out.scores.to_csv())] {
            let p = dir.join(format!("{}_{suffix}.csv", out.name));
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            paths.push(p);
        }
    }
    Ok(paths)
}

/// Parses the configured query set, writes label maps into `config.out`, and
/// evaluates queries that have ground truth. Per-query failures are logged
/// and reported in the summary; setup failures are returned as errors.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let (train, queries) = load_sets(config)?;
    run_on(config, &train, &queries)
}

pub fn run_on(config: &RunConfig, train: &Dataset, queries: &Dataset) -> Result<RunSummary> {
    let pipeline = Pipeline::new(config, train)?;
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let mut summary = RunSummary { report: EvalReport::new(train.num_classes), failures: Vec::new(), outputs: Vec::new() };
    for (entry, result) in queries.entries.iter().zip(pipeline.parse_all(queries)) {
        let finish = |out: &QueryOutput| -> Result<(Vec<PathBuf>, Option<EvalReport>)> {
            let paths = write_outputs(out, &train.palette, &config.out, config.debug_dumps)?;
            let eval = entry.labels.as_ref().map(|gt| evaluate(&entry.name, &out.labels, gt)).transpose()?;
            Ok((paths, eval))
        };
        match result.and_then(|out| finish(&out).map(|r| (out, r))) {
            Ok((out, (paths, eval))) => {
                summary.outputs.extend(paths);
                if let Some(mut e) = eval {
                    e.timings = out.timings.clone();
                    summary.report.merge(&e);
                } else {
                    out.timings.iter().for_each(|(s, ms)| summary.report.add_time(s, *ms));
                }
                log::info!("{}: done", entry.name);
            }
            Err(e) => {
                log::error!("{}: {e}", entry.name);
                summary.failures.push((entry.name.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::grid_partition;

    #[test]
    fn broadcast_copies_superpixel_labels() {
        let part = grid_partition(4, 2, 2);
        let map = broadcast_labels(&part, &[1, 0], 2).unwrap();
        assert_eq!(map.labels(), &[1, 1, 0, 0, 1, 1, 0, 0]);
        assert!(broadcast_labels(&part, &[1], 2).is_err());
    }
}
