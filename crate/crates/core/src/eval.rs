//! Per-class IoU, per-image mean IoU and comparison reports.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Regime;
use crate::raster::LabelMap;
use crate::taxonomy::ClassTaxonomy;

/// Per-class pixel counts for one prediction/ground-truth pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

impl ClassCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn add(&mut self, other: &ClassCounts) {
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }
}

/// Counts TP/FP/FN per class. Pixels whose ground truth is `unknown_index` are skipped.
pub fn confusion_counts(pred: ArrayView2<u8>, gt: ArrayView2<u8>, num_classes: usize, unknown_index: u8) -> Result<ClassCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut counts = ClassCounts::zeros(num_classes);
    for (((row, col), &p), &g) in pred.indexed_iter().zip(gt.iter()) {
        for v in [p, g] {
            if v as usize >= num_classes {
                return Err(Error::LabelOutOfRange { value: v, row, col, num_classes });
            }
        }
        if g == unknown_index {
            continue;
        }
        if p == g {
            counts.tp[g as usize] += 1;
        } else {
            counts.fp[p as usize] += 1;
            counts.fn_[g as usize] += 1;
        }
    }
    Ok(counts)
}

/// `TP / (TP + FP + FN)` per class, `None` when the union is empty.
pub fn iou_per_class(counts: &ClassCounts) -> Vec<Option<f64>> {
    (0..counts.num_classes())
        .map(|c| {
            let union = counts.tp[c] + counts.fp[c] + counts.fn_[c];
            (union > 0).then(|| counts.tp[c] as f64 / union as f64)
        })
        .collect()
}

/// Mean over defined IoUs of every class except `unknown_index`.
/// `None` when no such class is defined; callers drop the image from averages.
pub fn image_mean_iou(per_class: &[Option<f64>], unknown_index: u8) -> Option<f64> {
    let defined: Vec<f64> = per_class
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != unknown_index as usize)
        .filter_map(|(_, v)| *v)
        .collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub regime: Regime,
    /// Name of the auxiliary dataset, or `"none"` for target-only runs.
    pub source_dataset: String,
    pub seed: u64,
    /// Test split label, e.g. `rural` or `urban`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    pub per_class: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub class_names: Vec<String>,
    pub unknown_index: u8,
    /// Sorted by image id.
    pub images: Vec<ImageResult>,
    pub mean_iou: Option<f64>,
    pub class_means: Vec<Option<f64>>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl EvalReport {
    pub fn class_mean(&self, name: &str) -> Option<f64> {
        let idx = self.class_names.iter().position(|n| n == name)?;
        self.class_means[idx]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every ground-truth image against the prediction with the same id.
pub fn evaluate_dataset(
    predictions: &[(String, LabelMap)],
    ground_truth: &[(String, LabelMap)],
    taxonomy: &ClassTaxonomy,
    metadata: ReportMetadata,
) -> Result<EvalReport> {
    let mut preds: BTreeMap<&str, &LabelMap> = BTreeMap::new();
    for (id, map) in predictions {
        if preds.insert(id.as_str(), map).is_some() {
            return Err(Error::Eval(format!("duplicate prediction for image `{id}`")));
        }
    }
    let mut gts: BTreeMap<&str, &LabelMap> = BTreeMap::new();
    for (id, map) in ground_truth {
        if gts.insert(id.as_str(), map).is_some() {
            return Err(Error::Eval(format!("duplicate ground truth for image `{id}`")));
        }
    }
    if let Some(extra) = preds.keys().find(|id| !gts.contains_key(*id)) {
        return Err(Error::Eval(format!("prediction `{extra}` has no ground truth")));
    }

    let c = taxonomy.len();
    let unknown = taxonomy.unknown_index();
    let mut images = Vec::with_capacity(gts.len());
    let mut diagnostics = Vec::new();
    // BTreeMap iteration fixes the reduction order regardless of input order.
    for (id, gt) in &gts {
        let pred = preds
            .get(id)
            .ok_or_else(|| Error::Eval(format!("missing prediction for image `{id}`")))?;
        let counts = confusion_counts(pred.view(), gt.view(), c, unknown)?;
        let per_class = iou_per_class(&counts);
        let mean_iou = image_mean_iou(&per_class, unknown);
        if mean_iou.is_none() {
            diagnostics.push(format!("image `{id}` has no scorable class and is excluded"));
        }
        images.push(ImageResult {
            id: id.to_string(),
            per_class,
            mean_iou,
        });
    }

    let mean_iou = mean(images.iter().filter_map(|r| r.mean_iou));
    let class_means = (0..c)
        .map(|k| {
            if k == unknown as usize {
                None
            } else {
                mean(images.iter().filter_map(|r| r.per_class[k]))
            }
        })
        .collect();
    Ok(EvalReport {
        metadata,
        class_names: taxonomy.names().to_vec(),
        unknown_index: unknown,
        images,
        mean_iou,
        class_means,
        diagnostics,
    })
}

pub const REPORT_HEADER: [&str; 8] = [
    "source_dataset",
    "transfer_method",
    "miou",
    "iou_urban",
    "iou_open_area",
    "iou_water",
    "iou_forest",
    "iou_building",
];

/// Split label whose urban-class IoU fills the `iou_building` column.
pub const BUILDING_SPLIT: &str = "urban";

#[derive(Default)]
struct Row<'a> {
    main: Option<&'a EvalReport>,
    urban: Option<&'a EvalReport>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Renders reports as CSV, one row per (source dataset, method) in first-seen order.
///
/// A report whose split is `urban` contributes only the building column of its row;
/// any other report supplies mIoU and the per-class columns.
pub fn render_report(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Eval("no reports to emit".into()));
    }
    let mut order: Vec<(String, Regime)> = Vec::new();
    let mut rows: BTreeMap<(String, &'static str), Row> = BTreeMap::new();
    for r in reports {
        let m = &r.metadata;
        let key = (m.source_dataset.clone(), m.regime.as_str());
        let row = rows.entry(key).or_insert_with(|| {
            order.push((m.source_dataset.clone(), m.regime));
            Row::default()
        });
        let slot = if m.split.as_deref() == Some(BUILDING_SPLIT) {
            &mut row.urban
        } else {
            &mut row.main
        };
        if slot.replace(r).is_some() {
            return Err(Error::DuplicateRowKey {
                source_dataset: m.source_dataset.clone(),
                method: m.regime.as_str().to_string(),
            });
        }
    }

    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Eval(format!("csv: {e}"));
    writer.write_record(REPORT_HEADER).map_err(csv_err)?;
    for (source, regime) in &order {
        let row = &rows[&(source.clone(), regime.as_str())];
        let class = |name: &str| row.main.and_then(|r| r.class_mean(name));
        writer
            .write_record([
                source.clone(),
                regime.as_str().to_string(),
                cell(row.main.and_then(|r| r.mean_iou)),
                cell(class("urban")),
                cell(class("open_area")),
                cell(class("water")),
                cell(class("forest")),
                cell(row.urban.and_then(|r| r.class_mean("urban"))),
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Eval(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Eval(e.to_string()))
}

pub fn emit_report(reports: &[EvalReport], path: &Path) -> Result<()> {
    let text = render_report(reports)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
