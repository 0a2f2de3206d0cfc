use serde::{Deserialize, Serialize};

use crate::losses::Regime;
use crate::pipeline::DatasetDescriptor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeRecommendation {
    pub regime: Regime,
    pub reasons: Vec<String>,
}

/// Picks a regime from dataset compatibility.
///
/// Zoom levels are compared as declared, so a source should be passed after
/// `DatasetDescriptor::downscaled` when its resolution is matched to the target.
pub fn recommend_regime(target: &DatasetDescriptor, source: Option<&DatasetDescriptor>) -> RegimeRecommendation {
    let Some(source) = source else {
        return RegimeRecommendation {
            regime: Regime::Supervised,
            reasons: vec!["no source dataset: train on the target alone".into()],
        };
    };
    let zoom_match = target.zoom_level == source.zoom_level;
    let rules_match = target.annotation_rules_id == source.annotation_rules_id;
    let reasons = vec![
        if zoom_match {
            format!("zoom levels match ({})", target.zoom_level)
        } else {
            format!("zoom levels differ (target {}, source {})", target.zoom_level, source.zoom_level)
        },
        if rules_match {
            format!("annotation rules match (`{}`)", target.annotation_rules_id)
        } else {
            format!(
                "annotation rules differ (target `{}`, source `{}`)",
                target.annotation_rules_id, source.annotation_rules_id
            )
        },
    ];
    let regime = if zoom_match && rules_match {
        Regime::MccTransfer
    } else {
        Regime::MccSemi
    };
    RegimeRecommendation { regime, reasons }
}
