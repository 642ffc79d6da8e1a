//! Picking the best first-stage candidate with a prompt-similarity scorer.

use rayon::prelude::*;

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

pub trait ScorerBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Higher is better.
    fn score(&self, image: &ImageBuffer, prompt: &str) -> Result<f64>;
}

impl<S: ScorerBackend + ?Sized> ScorerBackend for std::sync::Arc<S> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn score(&self, image: &ImageBuffer, prompt: &str) -> Result<f64> {
        (**self).score(image, prompt)
    }
}

/// Negative squared L2 distance to a fixed reference. Ignores the prompt.
///
/// Candidates whose shape differs from the reference are resized
/// bilinearly first.
#[derive(Debug, Clone)]
pub struct L2Scorer {
    pub reference: ImageBuffer,
}

impl L2Scorer {
    pub fn new(reference: ImageBuffer) -> Self {
        Self { reference }
    }
}

impl ScorerBackend for L2Scorer {
    fn name(&self) -> &str {
        "l2"
    }

    fn score(&self, image: &ImageBuffer, _prompt: &str) -> Result<f64> {
        let resized;
        let image = if (image.width(), image.height()) == (self.reference.width(), self.reference.height()) {
            image
        } else {
            resized = crate::image_ops::resize_bilinear(image, self.reference.width(), self.reference.height())?;
            &resized
        };
        image.ensure_same_shape(&self.reference)?;
        let d: f64 = image
            .data()
            .iter()
            .zip(self.reference.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(-d)
    }
}

/// Scores every candidate, in parallel.
pub fn score_all<S: ScorerBackend + ?Sized>(scorer: &S, candidates: &[ImageBuffer], prompt: &str) -> Result<Vec<f64>> {
    candidates.par_iter().map(|c| scorer.score(c, prompt)).collect()
}

/// Index of the highest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Backend(format!("scorer returned NaN for candidate {i}")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_best<S: ScorerBackend + ?Sized>(scorer: &S, candidates: &[ImageBuffer], prompt: &str) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    argmax(&score_all(scorer, candidates, prompt)?)
}
