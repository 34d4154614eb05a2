//! Prompt template ensembling for category text embeddings.

use std::path::Path;

use crate::data::EmbeddingVector;
use crate::error::{Error, Result};
use crate::retrieval::provider::EmbeddingProvider;

/// Default prompt pattern list, one `{}` slot per line.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.txt");

/// Parses template text: one pattern per line, each with exactly one `{}` slot.
/// Blank lines and `#` comments are skipped.
pub fn parse_templates(text: &str) -> Result<Vec<String>> {
    let mut templates = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.matches("{}").count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "template must contain exactly one {{}} slot: {line:?}"
            )));
        }
        templates.push(line.to_string());
    }
    if templates.is_empty() {
        return Err(Error::InvalidArgument("template list is empty".into()));
    }
    Ok(templates)
}

pub fn load_templates(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_templates(&text)
}

pub fn default_templates() -> Vec<String> {
    parse_templates(DEFAULT_TEMPLATES).expect("vendored template list is valid")
}

/// Embeds a category through every template and averages.
///
/// Each prompt embedding is L2-normalized, the normalized vectors are averaged,
/// and the mean is re-normalized to unit length. The category text should
/// already be alias-resolved by the caller.
pub fn ensemble_prompts(
    templates: &[String],
    category: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector> {
    if templates.is_empty() {
        return Err(Error::InvalidArgument("template list is empty".into()));
    }
    let mut mean = vec![0.0f64; provider.dim()];
    for template in templates {
        let prompt = template.replacen("{}", category, 1);
        let emb = provider.text_embed(&prompt)?;
        if emb.dim() != mean.len() {
            return Err(Error::Dimension(format!(
                "provider returned dim {} (expected {})",
                emb.dim(),
                mean.len()
            )));
        }
        let unit = if emb.is_normalized() {
            emb
        } else {
            EmbeddingVector::normalized(emb.values().to_vec())?
        };
        for (m, v) in mean.iter_mut().zip(unit.values()) {
            *m += f64::from(*v);
        }
    }
    let n = templates.len() as f64;
    let values: Vec<f32> = mean.iter().map(|m| (*m / n) as f32).collect();
    let norm: f32 = values.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm < 1e-8 {
        return Err(Error::DegenerateEnsemble);
    }
    EmbeddingVector::normalized(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageSample;

    /// Stub provider mapping prompt text to fixed 2-D vectors.
    struct StubProvider;

    impl EmbeddingProvider for StubProvider {
        fn dim(&self) -> usize {
            2
        }
        fn image_embed(&self, _: &ImageSample) -> Result<EmbeddingVector> {
            unreachable!("text-only stub")
        }
        fn text_embed(&self, text: &str) -> Result<EmbeddingVector> {
            let v = if text.contains("east") {
                vec![1.0, 0.0]
            } else if text.contains("north") {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 1.0]
            };
            EmbeddingVector::normalized(v)
        }
    }

    #[test]
    fn default_template_file_has_85_entries() {
        assert_eq!(default_templates().len(), 85);
    }

    #[test]
    fn single_template_passes_through() {
        let templates = vec!["east {}".to_string()];
        let out = ensemble_prompts(&templates, "thing", &StubProvider).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0]);
    }

    #[test]
    fn orthogonal_pair_averages_to_diagonal() {
        let templates = vec!["east {}".to_string(), "north {}".to_string()];
        let out = ensemble_prompts(&templates, "thing", &StubProvider).unwrap();
        let expected = (2.0f32).sqrt() / 2.0;
        assert!((out.values()[0] - expected).abs() < 1e-6);
        assert!((out.values()[1] - expected).abs() < 1e-6);
    }

    #[test]
    fn order_invariant_within_tolerance() {
        let a = ensemble_prompts(
            &["east {}".into(), "north {}".into(), "flat {}".into()],
            "x",
            &StubProvider,
        )
        .unwrap();
        let b = ensemble_prompts(
            &["flat {}".into(), "east {}".into(), "north {}".into()],
            "x",
            &StubProvider,
        )
        .unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn template_without_slot_rejected() {
        assert!(parse_templates("a photo of a thing").is_err());
        assert!(parse_templates("a {} of a {}").is_err());
    }

    #[test]
    fn empty_template_list_rejected() {
        let err = ensemble_prompts(&[], "x", &StubProvider).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    /// Provider whose outputs cancel out, driving the mean to zero.
    struct CancellingProvider;

    impl EmbeddingProvider for CancellingProvider {
        fn dim(&self) -> usize {
            2
        }
        fn image_embed(&self, _: &ImageSample) -> Result<EmbeddingVector> {
            unreachable!()
        }
        fn text_embed(&self, text: &str) -> Result<EmbeddingVector> {
            let v = if text.contains("plus") {
                vec![1.0, 0.0]
            } else {
                vec![-1.0, 0.0]
            };
            EmbeddingVector::normalized(v)
        }
    }

    #[test]
    fn degenerate_ensemble_is_fatal() {
        let err = ensemble_prompts(
            &["plus {}".into(), "minus {}".into()],
            "x",
            &CancellingProvider,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateEnsemble));
    }
}
