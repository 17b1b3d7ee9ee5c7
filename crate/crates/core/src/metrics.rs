//! Explanation-quality and predictive metrics.
//!
//! Saliency metrics work on normalized input-resolution overlays divided
//! into rectangular cells (one cell per feature-map location in the
//! default pipeline). Predictive metrics are plain accuracy and
//! Mann-Whitney AUC. Aggregation reports mean and population standard
//! deviation, accumulated in f64 in a fixed order so corpus-level results
//! are deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, PassCounter};
use crate::tensor::{softmax, Tensor4};

/// Half-open axis-aligned rectangle: rows `row0..row1`, columns
/// `col0..col1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BoxRect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }
}

/// Per-sample annotation: a binary mask at input resolution plus the
/// lesion bounding boxes. For synthetic data every mask pixel lies in
/// some box and every box contains at least one mask pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `(1, 1, h, w)` with values 0.0 or 1.0.
    pub mask: Tensor4,
    pub boxes: Vec<BoxRect>,
}

impl GroundTruth {
    pub fn empty(h: usize, w: usize) -> Self {
        GroundTruth {
            mask: Tensor4::zeros(1, 1, h, w),
            boxes: Vec::new(),
        }
    }

    /// Binary union of the boxes as a `(1, 1, h, w)` grid.
    pub fn box_union_mask(&self, h: usize, w: usize) -> Tensor4 {
        let mut union = Tensor4::zeros(1, 1, h, w);
        for b in &self.boxes {
            for y in b.row0..b.row1.min(h) {
                for x in b.col0..b.col1.min(w) {
                    union.set(0, 0, y, x, 1.0);
                }
            }
        }
        union
    }
}

/// Tiling of the input plane into equal rectangular cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub cell_h: usize,
    pub cell_w: usize,
}

impl CellGrid {
    pub fn new(cell_h: usize, cell_w: usize) -> Result<Self> {
        if cell_h == 0 || cell_w == 0 {
            return Err(Error::Config {
                detail: "cell dims must be positive".into(),
            });
        }
        Ok(CellGrid { cell_h, cell_w })
    }

    /// Cell rows and columns for an overlay of `h x w` pixels; the cells
    /// must tile the overlay exactly.
    pub fn layout(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h % self.cell_h != 0 || w % self.cell_w != 0 {
            return Err(Error::Geometry {
                op: "cell_grid",
                detail: format!(
                    "{h}x{w} overlay is not tiled by {}x{} cells",
                    self.cell_h, self.cell_w
                ),
            });
        }
        Ok((h / self.cell_h, w / self.cell_w))
    }
}

/// Ranks cells by mean overlay value (descending, ties to the lowest
/// row-major cell index) and returns the first `k` as `(cell_row,
/// cell_col)` pairs.
pub fn topk_cells(overlay: &Tensor4, grid: CellGrid, k: usize) -> Result<Vec<(usize, usize)>> {
    let (_, _, h, w) = overlay.dims();
    let (rows, cols) = grid.layout(h, w)?;
    let total = rows * cols;
    if k > total {
        return Err(Error::Config {
            detail: format!("k = {k} exceeds the {total}-cell grid"),
        });
    }

    let mut means = Vec::with_capacity(total);
    for cy in 0..rows {
        for cx in 0..cols {
            let mut acc = 0.0f32;
            for y in cy * grid.cell_h..(cy + 1) * grid.cell_h {
                for x in cx * grid.cell_w..(cx + 1) * grid.cell_w {
                    acc += overlay.at(0, 0, y, x);
                }
            }
            means.push(acc / (grid.cell_h * grid.cell_w) as f32);
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .partial_cmp(&means[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order[..k].iter().map(|&i| (i / cols, i % cols)).collect())
}

/// What replaces the pixels of a masked cell.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskFill {
    /// Per-channel fill values, typically the corpus channel means.
    ChannelValues(Vec<f32>),
    /// Keep the original pixels (a no-op mask; sensitivity becomes 0).
    Original,
}

/// Masks the top-k cells of `input` according to `fill`.
pub fn mask_top_cells(
    input: &Tensor4,
    cells: &[(usize, usize)],
    grid: CellGrid,
    fill: &MaskFill,
) -> Result<Tensor4> {
    let (_, c, _, _) = input.dims();
    let mut masked = input.clone();
    match fill {
        MaskFill::Original => {}
        MaskFill::ChannelValues(values) => {
            if values.len() != c {
                return Err(Error::Shape {
                    op: "mask_top_cells",
                    expected: format!("{c} fill values"),
                    actual: format!("{}", values.len()),
                });
            }
            for &(cy, cx) in cells {
                for ch in 0..c {
                    for y in cy * grid.cell_h..(cy + 1) * grid.cell_h {
                        for x in cx * grid.cell_w..(cx + 1) * grid.cell_w {
                            masked.set(0, ch, y, x, values[ch]);
                        }
                    }
                }
            }
        }
    }
    Ok(masked)
}

/// Relative drop of the predicted-class probability after masking the
/// overlay's top-k cells: `(p - p') / p`. The class and `p` come from the
/// model's own prediction on the unmasked input.
pub fn topk_sensitivity(
    model: &ModelGraph,
    input: &Tensor4,
    overlay: &Tensor4,
    grid: CellGrid,
    k: usize,
    fill: &MaskFill,
) -> Result<f32> {
    let cells = topk_cells(overlay, grid, k)?;
    let mut counter = PassCounter::new();

    let out = model.forward(input, false, &mut counter)?;
    let probabilities = softmax(&out.sample_logits(0));
    let class = crate::graph::argmax(&probabilities);
    let p = probabilities[class];

    let masked = mask_top_cells(input, &cells, grid, fill)?;
    let out_masked = model.forward(&masked, false, &mut counter)?;
    let p_masked = softmax(&out_masked.sample_logits(0))[class];

    Ok((p - p_masked) / p)
}

/// Fraction of the top-k cells that contain at least one ground-truth
/// mask pixel.
pub fn topk_localization(
    overlay: &Tensor4,
    grid: CellGrid,
    k: usize,
    gt: &GroundTruth,
) -> Result<f32> {
    let cells = topk_cells(overlay, grid, k)?;
    let hits = cells
        .iter()
        .filter(|&&(cy, cx)| {
            for y in cy * grid.cell_h..(cy + 1) * grid.cell_h {
                for x in cx * grid.cell_w..(cx + 1) * grid.cell_w {
                    if gt.mask.at(0, 0, y, x) > 0.5 {
                        return true;
                    }
                }
            }
            false
        })
        .count();
    Ok(hits as f32 / k as f32)
}

/// How "fraction of activations inside the boxes" is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationPrecisionMode {
    /// Soft mass: sum of overlay values inside the box union over the
    /// total sum.
    SoftMass,
    /// Count only cells whose value exceeds the threshold.
    Thresholded(f32),
}

/// Fraction of overlay activation falling inside the ground-truth box
/// union. Returns 0 when the overlay carries no mass at all.
pub fn activation_precision(
    overlay: &Tensor4,
    gt: &GroundTruth,
    mode: ActivationPrecisionMode,
) -> Result<f32> {
    let (_, _, h, w) = overlay.dims();
    let union = gt.box_union_mask(h, w);
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let v = overlay.at(0, 0, y, x);
            let weight = match mode {
                ActivationPrecisionMode::SoftMass => v as f64,
                ActivationPrecisionMode::Thresholded(tau) => {
                    if v > tau {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            total += weight;
            if union.at(0, 0, y, x) > 0.5 {
                inside += weight;
            }
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok((inside / total) as f32)
}

/// Fraction of predictions equal to their labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Shape {
            op: "accuracy",
            expected: format!("{} labels for {} predictions", predictions.len(), predictions.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Mann-Whitney AUC via the average-rank statistic, with ties
/// contributing 1/2. Computed entirely in f64; for the corpus sizes this
/// crate works at, the result equals exhaustive pair counting exactly.
pub fn auc(scores: &[f32], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "auc",
            expected: format!("{} labels", scores.len()),
            actual: format!("{}", labels.len()),
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Average ranks over tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Mean and population standard deviation of one metric stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
}

/// Aggregates per-sample values in their given order.
pub fn aggregate(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::EmptyStream);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MetricSummary {
        mean,
        sd: var.sqrt(),
    })
}

/// One method's row in the corpus report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub topk_sensitivity: f64,
    pub topk_localization: MetricSummary,
    pub activation_precision: MetricSummary,
    pub accuracy: f64,
    pub auc: f64,
    pub k: usize,
    pub n: usize,
}

/// Corpus-level metrics, keyed by method name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsReport {
    pub methods: BTreeMap<String, MethodRecord>,
}

/// Per-sample streams for one method, aggregated into a record.
#[derive(Debug, Clone, Default)]
pub struct MethodSamples {
    pub sensitivity: Vec<f64>,
    pub localization: Vec<f64>,
    pub activation: Vec<f64>,
}

impl MethodSamples {
    pub fn aggregate_record(&self, accuracy: f64, auc: f64, k: usize) -> Result<MethodRecord> {
        let n = self.sensitivity.len();
        if n != self.localization.len() || n != self.activation.len() {
            return Err(Error::Shape {
                op: "aggregate_record",
                expected: format!("{n} values in every stream"),
                actual: format!(
                    "{} localization, {} activation",
                    self.localization.len(),
                    self.activation.len()
                ),
            });
        }
        Ok(MethodRecord {
            topk_sensitivity: aggregate(&self.sensitivity)?.mean,
            topk_localization: aggregate(&self.localization)?,
            activation_precision: aggregate(&self.activation)?,
            accuracy,
            auc,
            k,
            n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{slot_names, HeadKind, LayerSpec, ModelGraph, ParamStore};

    fn unit_grid() -> CellGrid {
        CellGrid::new(1, 1).unwrap()
    }

    #[test]
    fn topk_cells_ranks_by_mean_descending() {
        let overlay = Tensor4::new(1, 1, 2, 2, vec![0.9, 0.1, 0.8, 0.2]).unwrap();
        let cells = topk_cells(&overlay, unit_grid(), 2).unwrap();
        assert_eq!(cells, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn topk_cells_breaks_ties_row_major() {
        let overlay = Tensor4::filled(1, 1, 2, 2, 0.5);
        let cells = topk_cells(&overlay, unit_grid(), 3).unwrap();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn topk_cells_with_k_equal_to_count_returns_all_sorted() {
        let overlay = Tensor4::new(1, 1, 2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        let cells = topk_cells(&overlay, unit_grid(), 4).unwrap();
        assert_eq!(cells, vec![(0, 1), (1, 0), (1, 1), (0, 0)]);
    }

    #[test]
    fn topk_cells_rejects_oversized_k() {
        let overlay = Tensor4::filled(1, 1, 2, 2, 0.5);
        assert!(topk_cells(&overlay, unit_grid(), 5).is_err());
    }

    #[test]
    fn topk_cells_uses_cell_means() {
        // 4x4 overlay, 2x2 cells: bottom-right cell has the largest mean.
        let mut overlay = Tensor4::zeros(1, 1, 4, 4);
        overlay.set(0, 0, 3, 3, 1.0);
        overlay.set(0, 0, 0, 0, 0.2);
        let grid = CellGrid::new(2, 2).unwrap();
        let cells = topk_cells(&overlay, grid, 1).unwrap();
        assert_eq!(cells, vec![(1, 1)]);
    }

    #[test]
    fn cell_grid_rejects_non_tiling_dims() {
        let overlay = Tensor4::filled(1, 1, 5, 4, 0.1);
        let grid = CellGrid::new(2, 2).unwrap();
        assert!(topk_cells(&overlay, grid, 1).is_err());
    }

    fn relu_model(classes: usize) -> ModelGraph {
        // Identity model over (classes, 1, 1) inputs restricted to
        // non-negative values; logits equal the input channels.
        ModelGraph::new(
            vec![LayerSpec::ReLU],
            ParamStore::new(),
            (classes, 1, 1),
            classes,
            HeadKind::GapFc,
        )
        .unwrap()
    }

    /// A model whose logits depend on the spatial mean of its single
    /// input channel, for sensitivity tests on 2x2 images.
    fn pooling_model() -> ModelGraph {
        let mut params = ParamStore::new();
        let (wslot, bslot) = slot_names(2);
        params.insert_tensor(&wslot, Tensor4::new(2, 1, 1, 1, vec![4.0, -4.0]).unwrap());
        params.insert_vector(&bslot, vec![0.0, 0.0]);
        ModelGraph::new(
            vec![
                LayerSpec::GlobalAvgPool,
                LayerSpec::Flatten,
                LayerSpec::FullyConnected {
                    in_features: 1,
                    out_features: 2,
                    weight: wslot,
                    bias: bslot,
                },
            ],
            params,
            (1, 2, 2),
            2,
            HeadKind::GapFc,
        )
        .unwrap()
    }

    #[test]
    fn sensitivity_with_original_fill_is_zero() {
        let model = pooling_model();
        let input = Tensor4::new(1, 1, 2, 2, vec![1.0, 0.2, 0.1, 0.1]).unwrap();
        let overlay = Tensor4::new(1, 1, 2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = topk_sensitivity(&model, &input, &overlay, unit_grid(), 1, &MaskFill::Original).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn sensitivity_matches_manual_recomputation() {
        let model = pooling_model();
        let input = Tensor4::new(1, 1, 2, 2, vec![1.0, 0.2, 0.1, 0.1]).unwrap();
        let overlay = Tensor4::new(1, 1, 2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let fill = MaskFill::ChannelValues(vec![0.0]);
        let s = topk_sensitivity(&model, &input, &overlay, unit_grid(), 1, &fill).unwrap();

        let mut counter = PassCounter::new();
        let p = softmax(&model.forward(&input, false, &mut counter).unwrap().sample_logits(0))[0];
        let masked = Tensor4::new(1, 1, 2, 2, vec![0.0, 0.2, 0.1, 0.1]).unwrap();
        let p2 = softmax(&model.forward(&masked, false, &mut counter).unwrap().sample_logits(0))[0];
        assert_eq!(s, (p - p2) / p);
        assert!(s > 0.0);
    }

    #[test]
    fn localization_counts_intersecting_cells() {
        let mut mask = Tensor4::zeros(1, 1, 2, 2);
        mask.set(0, 0, 0, 0, 1.0);
        let gt = GroundTruth {
            mask,
            boxes: vec![BoxRect { row0: 0, col0: 0, row1: 1, col1: 1 }],
        };
        // Top-2 cells are (0,0) and (0,1); only the first hits the mask.
        let overlay = Tensor4::new(1, 1, 2, 2, vec![0.9, 0.8, 0.1, 0.0]).unwrap();
        let loc = topk_localization(&overlay, unit_grid(), 2, &gt).unwrap();
        assert_eq!(loc, 0.5);

        // Both top cells on the mask row.
        let mut full_mask = Tensor4::zeros(1, 1, 2, 2);
        full_mask.set(0, 0, 0, 0, 1.0);
        full_mask.set(0, 0, 0, 1, 1.0);
        let gt_full = GroundTruth {
            mask: full_mask,
            boxes: vec![BoxRect { row0: 0, col0: 0, row1: 1, col1: 2 }],
        };
        let loc_full = topk_localization(&overlay, unit_grid(), 2, &gt_full).unwrap();
        assert_eq!(loc_full, 1.0);
    }

    #[test]
    fn localization_with_empty_mask_is_zero() {
        let gt = GroundTruth::empty(2, 2);
        let overlay = Tensor4::filled(1, 1, 2, 2, 0.7);
        let loc = topk_localization(&overlay, unit_grid(), 2, &gt).unwrap();
        assert_eq!(loc, 0.0);
    }

    #[test]
    fn activation_precision_uniform_overlay_half_covered() {
        let overlay = Tensor4::filled(1, 1, 2, 2, 0.4);
        let gt = GroundTruth {
            mask: Tensor4::zeros(1, 1, 2, 2),
            boxes: vec![BoxRect { row0: 0, col0: 0, row1: 1, col1: 2 }],
        };
        let ap = activation_precision(&overlay, &gt, ActivationPrecisionMode::SoftMass).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn activation_precision_fully_inside_boxes_is_one() {
        let mut overlay = Tensor4::zeros(1, 1, 4, 4);
        overlay.set(0, 0, 1, 1, 0.9);
        overlay.set(0, 0, 1, 2, 0.3);
        let gt = GroundTruth {
            mask: Tensor4::zeros(1, 1, 4, 4),
            boxes: vec![BoxRect { row0: 1, col0: 1, row1: 2, col1: 3 }],
        };
        let ap = activation_precision(&overlay, &gt, ActivationPrecisionMode::SoftMass).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn activation_precision_of_empty_overlay_is_zero() {
        let overlay = Tensor4::zeros(1, 1, 2, 2);
        let gt = GroundTruth {
            mask: Tensor4::zeros(1, 1, 2, 2),
            boxes: vec![BoxRect { row0: 0, col0: 0, row1: 2, col1: 2 }],
        };
        let ap = activation_precision(&overlay, &gt, ActivationPrecisionMode::SoftMass).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn thresholded_activation_precision_counts_exceeding_pixels() {
        let overlay = Tensor4::new(1, 1, 2, 2, vec![0.9, 0.6, 0.4, 0.1]).unwrap();
        let gt = GroundTruth {
            mask: Tensor4::zeros(1, 1, 2, 2),
            boxes: vec![BoxRect { row0: 0, col0: 0, row1: 1, col1: 1 }],
        };
        // Above 0.5: pixels (0,0) and (0,1); only (0,0) is inside.
        let ap = activation_precision(&overlay, &gt, ActivationPrecisionMode::Thresholded(0.5)).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_matches_worked_example() {
        let value = auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(value, 0.75);
    }

    #[test]
    fn auc_of_separated_scores_is_one() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn auc_of_constant_scores_is_half() {
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::AucUndefined)));
    }

    #[test]
    fn auc_tie_between_classes_contributes_half() {
        // One tied positive/negative pair, one clean pair.
        let value = auc(&[0.5, 0.5, 0.9], &[0, 1, 1]).unwrap();
        // Pairs: (neg 0.5, pos 0.5) -> 0.5; (neg 0.5, pos 0.9) -> 1.
        assert_eq!(value, 0.75);
    }

    #[test]
    fn aggregate_matches_closed_form() {
        let single = aggregate(&[0.7]).unwrap();
        assert_eq!(single.mean, 0.7);
        assert_eq!(single.sd, 0.0);

        let pair = aggregate(&[0.2, 0.4]).unwrap();
        assert!((pair.mean - 0.3).abs() < 1e-12);
        assert!((pair.sd - 0.1).abs() < 1e-12);

        assert!(matches!(aggregate(&[]), Err(Error::EmptyStream)));
    }

    #[test]
    fn report_serializes_with_method_keys() {
        let mut report = MetricsReport::default();
        report.methods.insert(
            "cam".into(),
            MethodRecord {
                topk_sensitivity: 0.5,
                topk_localization: MetricSummary { mean: 0.8, sd: 0.1 },
                activation_precision: MetricSummary { mean: 0.6, sd: 0.2 },
                accuracy: 0.95,
                auc: 0.99,
                k: 10,
                n: 30,
            },
        );
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.starts_with("{\"cam\":{"), "{json}");
        assert!(json.contains("\"topk_localization\":{\"mean\":0.8,\"sd\":0.1}"), "{json}");
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn sensitivity_is_defined_for_identity_models() {
        // Covers the plumbing on a model without pooling.
        let model = relu_model(2);
        let input = Tensor4::new(1, 2, 1, 1, vec![2.0, 0.5]).unwrap();
        let overlay = Tensor4::new(1, 1, 1, 1, vec![1.0]).unwrap();
        let fill = MaskFill::ChannelValues(vec![0.0, 0.0]);
        let s = topk_sensitivity(&model, &input, &overlay, unit_grid(), 1, &fill).unwrap();
        assert!(s > 0.0);
    }
}
