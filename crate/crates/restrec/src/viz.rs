//! Discrete-strategy visualization: group interactions (by timestamp bucket
//! or explicit label), infer hard strategy codes with sampling disabled, take
//! the per-block mode, and render one one-hot row per group as CSV and PNG.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::InteractionRecord;
use crate::error::Error;
use crate::graph::GraphStore;
use crate::model::{aggregate_strategy_context, encode_strategy, GumbelNoise, Model};
use crate::Result;

/// How interactions are grouped into heatmap rows.
#[derive(Debug, Clone)]
pub enum GroupingRule {
    /// Bucket timestamps into windows of this many seconds; rows are labeled
    /// by the bucket start. Interactions without timestamps are skipped.
    TimestampBucket { bucket_seconds: i64 },
    /// Explicit labels aligned with the interaction list.
    Labels(Vec<String>),
}

/// Binary heatmap: one row per non-empty group, B one-hot blocks of C columns.
#[derive(Debug, Clone)]
pub struct StrategyHeatmap {
    pub row_labels: Vec<String>,
    /// (groups x B*C), entries 0/1, exactly one 1 per block per row.
    pub matrix: Vec<Vec<u8>>,
    pub blocks: usize,
    pub cats: usize,
    /// Groups dropped because they had no usable interactions.
    pub empty_groups: usize,
}

impl StrategyHeatmap {
    pub fn validate(&self) -> Result<()> {
        for row in &self.matrix {
            if row.len() != self.blocks * self.cats {
                return Err(Error::Validation("heatmap row has wrong width".into()));
            }
            for b in 0..self.blocks {
                let ones: u32 = row[b * self.cats..(b + 1) * self.cats]
                    .iter()
                    .map(|&x| x as u32)
                    .sum();
                if ones != 1 {
                    return Err(Error::Validation(format!(
                        "block {b} has {ones} ones, expected exactly 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// CSV with a header of dimension indices and one labeled row per group.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        let header: Vec<String> = (0..self.blocks * self.cats)
            .map(|i| format!("dim_{i}"))
            .collect();
        writeln!(f, "group,{}", header.join(",")).map_err(|e| Error::io(path.display(), e))?;
        for (label, row) in self.row_labels.iter().zip(&self.matrix) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{label},{}", cells.join(",")).map_err(|e| Error::io(path.display(), e))?;
        }
        Ok(())
    }

    /// PNG rendering; one cell per dimension, yellow = 1, purple = 0.
    pub fn write_png(&self, path: &Path, cell_px: usize) -> Result<()> {
        const YELLOW: [u8; 3] = [253, 231, 37];
        const PURPLE: [u8; 3] = [68, 1, 84];
        let w = self.blocks * self.cats * cell_px;
        let h = self.matrix.len() * cell_px;
        if w == 0 || h == 0 {
            return Err(Error::Validation("empty heatmap".into()));
        }
        let mut buf = vec![0u8; w * h * 3];
        for (gi, row) in self.matrix.iter().enumerate() {
            for (di, &v) in row.iter().enumerate() {
                let color = if v == 1 { YELLOW } else { PURPLE };
                for py in 0..cell_px {
                    for px in 0..cell_px {
                        let y = gi * cell_px + py;
                        let x = di * cell_px + px;
                        buf[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                    }
                }
            }
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&buf)?;
        Ok(())
    }
}

/// Hard strategy code for one interaction under forced exposure with the
/// relaxation noise disabled.
pub fn hard_code(model: &Model, graph: &GraphStore, user: u32, item: u32) -> Result<Vec<usize>> {
    let (hd, _) = aggregate_strategy_context(model, user, graph.items_of(user));
    let code = encode_strategy(model, &hd, item, true, 1.0, GumbelNoise::Disabled)?;
    Ok(code.hard)
}

/// Build the per-group heatmap: infer each member interaction's hard code,
/// then take the per-block modal category (ties to the smaller index).
pub fn build_heatmap(
    model: &Model,
    graph: &GraphStore,
    interactions: &[InteractionRecord],
    grouping: &GroupingRule,
) -> Result<StrategyHeatmap> {
    let b = model.cfg.strategy_blocks;
    let c = model.cfg.strategy_cats;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match grouping {
        GroupingRule::TimestampBucket { bucket_seconds } => {
            if *bucket_seconds <= 0 {
                return Err(Error::Validation("bucket_seconds must be positive".into()));
            }
            for (i, rec) in interactions.iter().enumerate() {
                if let Some(ts) = rec.timestamp {
                    let bucket = ts.div_euclid(*bucket_seconds) * bucket_seconds;
                    groups.entry(format!("t{bucket}")).or_default().push(i);
                }
            }
        }
        GroupingRule::Labels(labels) => {
            if labels.len() != interactions.len() {
                return Err(Error::Precondition(format!(
                    "{} labels for {} interactions",
                    labels.len(),
                    interactions.len()
                )));
            }
            for (i, label) in labels.iter().enumerate() {
                groups.entry(label.clone()).or_default().push(i);
            }
        }
    }
    let mut row_labels = Vec::new();
    let mut matrix = Vec::new();
    let mut empty_groups = 0usize;
    for (label, members) in groups {
        if members.is_empty() {
            empty_groups += 1;
            continue;
        }
        // Per-block category counts over member interactions.
        let mut counts = vec![vec![0u32; c]; b];
        for &i in &members {
            let rec = &interactions[i];
            let code = hard_code(model, graph, rec.user, rec.item)?;
            for (bi, &cat) in code.iter().enumerate() {
                counts[bi][cat] += 1;
            }
        }
        let mut row = vec![0u8; b * c];
        for (bi, block) in counts.iter().enumerate() {
            let mode = block
                .iter()
                .enumerate()
                .max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i)))
                .unwrap()
                .0;
            row[bi * c + mode] = 1;
        }
        row_labels.push(label);
        matrix.push(row);
    }
    if matrix.is_empty() {
        return Err(Error::Validation(
            "no group produced a heatmap row (missing timestamps or labels?)".into(),
        ));
    }
    let hm = StrategyHeatmap {
        row_labels,
        matrix,
        blocks: b,
        cats: c,
        empty_groups,
    };
    hm.validate()?;
    Ok(hm)
}
