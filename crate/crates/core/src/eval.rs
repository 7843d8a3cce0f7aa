//! Recall@K retrieval evaluation.
//!
//! Text retrieval ranks all captions for each image query and counts a hit if
//! any ground-truth caption lands in the top K. Image retrieval ranks all
//! images for each caption query. Rank ties go to the lower candidate index.

use serde::{Deserialize, Serialize};

use crate::aeom::{score_matrix, MetaBlockConfig, ScoreMethod, SimilarityMatrix};
use crate::error::{AvseError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub num_images: usize,
    /// Image index of every caption.
    pub caption_to_image: Vec<usize>,
}

impl GroundTruth {
    pub fn new(num_images: usize, caption_to_image: Vec<usize>) -> Result<Self> {
        let gt = GroundTruth {
            num_images,
            caption_to_image,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_images];
        for (c, &img) in self.caption_to_image.iter().enumerate() {
            if img >= self.num_images {
                return Err(AvseError::domain(format!(
                    "caption {c} points at image {img}, only {} images exist",
                    self.num_images
                )));
            }
            seen[img] = true;
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(AvseError::domain(format!("image {orphan} has no caption")));
        }
        Ok(())
    }

    pub fn num_captions(&self) -> usize {
        self.caption_to_image.len()
    }

    /// Caption indices of every image, in caption order.
    pub fn captions_of(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_images];
        for (c, &img) in self.caption_to_image.iter().enumerate() {
            out[img].push(c);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecall {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl DirectionRecall {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Image query, caption candidates.
    pub text_retrieval: DirectionRecall,
    /// Caption query, image candidates.
    pub image_retrieval: DirectionRecall,
    pub rsum: f64,
}

impl RetrievalReport {
    pub fn new(text_retrieval: DirectionRecall, image_retrieval: DirectionRecall) -> Self {
        RetrievalReport {
            text_retrieval,
            image_retrieval,
            rsum: text_retrieval.sum() + image_retrieval.sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Full,
    #[serde(rename = "five_fold_1k")]
    FiveFold1k,
}

impl std::str::FromStr for Protocol {
    type Err = AvseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Protocol::Full),
            "5fold" | "five_fold_1k" => Ok(Protocol::FiveFold1k),
            other => Err(AvseError::domain(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Zero-based rank of candidate `target` among `scores` (higher is better,
/// ties to the lower index).
fn rank_of(scores: impl Iterator<Item = f64> + Clone, target: usize) -> usize {
    let t = scores.clone().nth(target).expect("target in range");
    scores
        .enumerate()
        .filter(|&(j, s)| s > t || (s == t && j < target))
        .count()
}

/// Smallest rank of any ground-truth caption per image, and rank of the
/// ground-truth image per caption.
fn ranks(sim: &SimilarityMatrix, gt: &GroundTruth) -> Result<(Vec<usize>, Vec<usize>)> {
    gt.validate()?;
    let s = &sim.scores;
    if s.rows() != gt.num_images || s.cols() != gt.num_captions() {
        return Err(AvseError::domain(format!(
            "similarity is {}x{}, ground truth has {} images and {} captions",
            s.rows(),
            s.cols(),
            gt.num_images,
            gt.num_captions()
        )));
    }
    let text = gt
        .captions_of()
        .iter()
        .enumerate()
        .map(|(i, caps)| {
            let row = s.row(i);
            caps.iter()
                .map(|&c| rank_of(row.iter().copied(), c))
                .min()
                .expect("every image has a caption")
        })
        .collect();
    let image = gt
        .caption_to_image
        .iter()
        .enumerate()
        .map(|(c, &img)| rank_of((0..s.rows()).map(|i| s[(i, c)]), img))
        .collect();
    Ok((text, image))
}

fn percent_within(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

fn check_k(k: usize, sim: &SimilarityMatrix) -> Result<()> {
    let max_k = sim.num_images().min(sim.num_texts());
    if k < 1 || k > max_k {
        return Err(AvseError::domain(format!(
            "k={k} must be between 1 and the candidate count {max_k}"
        )));
    }
    Ok(())
}

/// `(text retrieval R@k, image retrieval R@k)` in percent.
pub fn recall_at_k(sim: &SimilarityMatrix, gt: &GroundTruth, k: usize) -> Result<(f64, f64)> {
    check_k(k, sim)?;
    let (text, image) = ranks(sim, gt)?;
    Ok((percent_within(&text, k), percent_within(&image, k)))
}

fn full_report(sim: &SimilarityMatrix, gt: &GroundTruth) -> Result<RetrievalReport> {
    for k in [1, 5, 10] {
        check_k(k, sim)?;
    }
    let (text, image) = ranks(sim, gt)?;
    let dir = |r: &[usize]| DirectionRecall {
        r1: percent_within(r, 1),
        r5: percent_within(r, 5),
        r10: percent_within(r, 10),
    };
    Ok(RetrievalReport::new(dir(&text), dir(&image)))
}

/// Contiguous image folds and the captions that belong to each.
fn folds(gt: &GroundTruth) -> Result<Vec<(std::ops::Range<usize>, Vec<usize>)>> {
    if gt.num_images == 0 || gt.num_images % 5 != 0 {
        return Err(AvseError::domain(format!(
            "{} images cannot be split into 5 equal folds",
            gt.num_images
        )));
    }
    let size = gt.num_images / 5;
    Ok((0..5)
        .map(|f| {
            let range = f * size..(f + 1) * size;
            let caps = (0..gt.num_captions())
                .filter(|&c| range.contains(&gt.caption_to_image[c]))
                .collect();
            (range, caps)
        })
        .collect())
}

fn fold_gt(gt: &GroundTruth, range: &std::ops::Range<usize>, caps: &[usize]) -> Result<GroundTruth> {
    GroundTruth::new(
        range.len(),
        caps.iter().map(|&c| gt.caption_to_image[c] - range.start).collect(),
    )
}

fn mean_report(reports: &[RetrievalReport]) -> RetrievalReport {
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&RetrievalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    RetrievalReport::new(
        DirectionRecall {
            r1: avg(&|r| r.text_retrieval.r1),
            r5: avg(&|r| r.text_retrieval.r5),
            r10: avg(&|r| r.text_retrieval.r10),
        },
        DirectionRecall {
            r1: avg(&|r| r.image_retrieval.r1),
            r5: avg(&|r| r.image_retrieval.r5),
            r10: avg(&|r| r.image_retrieval.r10),
        },
    )
}

/// Evaluates a precomputed full similarity matrix. Under the five-fold
/// protocol each fold only ranks candidates from its own block.
pub fn evaluate_similarity(sim: &SimilarityMatrix, gt: &GroundTruth, protocol: Protocol) -> Result<RetrievalReport> {
    match protocol {
        Protocol::Full => full_report(sim, gt),
        Protocol::FiveFold1k => {
            let mut reports = Vec::with_capacity(5);
            for (range, caps) in folds(gt)? {
                let mut block = Matrix::zeros(range.len(), caps.len());
                for (bi, i) in range.clone().enumerate() {
                    for (bj, &c) in caps.iter().enumerate() {
                        block[(bi, bj)] = sim.scores[(i, c)];
                    }
                }
                let sub = SimilarityMatrix::new(block, sim.method);
                reports.push(full_report(&sub, &fold_gt(gt, &range, &caps)?)?);
            }
            Ok(mean_report(&reports))
        }
    }
}

/// Scores image and caption embeddings and evaluates them. Under the
/// five-fold protocol only within-fold pairs are scored.
pub fn evaluate_protocol<I, T>(
    images: &[I],
    texts: &[T],
    gt: &GroundTruth,
    protocol: Protocol,
    cfg: &MetaBlockConfig,
    method: ScoreMethod,
) -> Result<RetrievalReport>
where
    I: AsRef<[f64]> + Sync,
    T: AsRef<[f64]> + Sync,
{
    gt.validate()?;
    if images.len() != gt.num_images || texts.len() != gt.num_captions() {
        return Err(AvseError::domain(format!(
            "{} images / {} captions do not match ground truth ({} / {})",
            images.len(),
            texts.len(),
            gt.num_images,
            gt.num_captions()
        )));
    }
    match protocol {
        Protocol::Full => full_report(&score_matrix(images, texts, cfg, method)?, gt),
        Protocol::FiveFold1k => {
            let mut reports = Vec::with_capacity(5);
            for (range, caps) in folds(gt)? {
                let fold_texts: Vec<&[f64]> = caps.iter().map(|&c| texts[c].as_ref()).collect();
                let sim = score_matrix(&images[range.clone()], &fold_texts, cfg, method)?;
                reports.push(full_report(&sim, &fold_gt(gt, &range, &caps)?)?);
            }
            Ok(mean_report(&reports))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim(m: Matrix) -> SimilarityMatrix {
        SimilarityMatrix::new(m, ScoreMethod::Aeom)
    }

    /// Stable sort of candidate indices by descending score.
    fn sorted_rank(scores: &[f64], target: usize) -> usize {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        idx.iter().position(|&i| i == target).unwrap()
    }

    #[test]
    fn identity_dominant() {
        let mut m = Matrix::identity(3);
        m[(0, 1)] = 0.5;
        let gt = GroundTruth::new(3, vec![0, 1, 2]).unwrap();
        assert_eq!(recall_at_k(&sim(m.clone()), &gt, 1).unwrap(), (100.0, 100.0));
        assert_eq!(recall_at_k(&sim(m.clone()), &gt, 3).unwrap(), (100.0, 100.0));
        assert!(recall_at_k(&sim(m.clone()), &gt, 0).is_err());
        assert!(recall_at_k(&sim(m), &gt, 4).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let gt = GroundTruth::new(2, vec![0, 1]).unwrap();
        // image 1 ties with image 0 for caption 1 and loses
        assert_eq!(recall_at_k(&sim(m), &gt, 1).unwrap(), (50.0, 50.0));
    }

    #[test]
    fn matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let caption_to_image: Vec<usize> = (0..50).map(|c| c % 10).collect();
            let gt = GroundTruth::new(10, caption_to_image.clone()).unwrap();
            let m = Matrix::from_vec(10, 50, (0..500).map(|_| (rng.gen_range(0..20) as f64) / 10.0).collect()).unwrap();
            for k in [1, 3, 5, 10] {
                let (t, i) = recall_at_k(&sim(m.clone()), &gt, k).unwrap();
                let t_hits = (0..10)
                    .filter(|&img| {
                        (0..50).filter(|&c| caption_to_image[c] == img).any(|c| sorted_rank(m.row(img), c) < k)
                    })
                    .count();
                let i_hits = (0..50)
                    .filter(|&c| sorted_rank(&m.column(c), caption_to_image[c]) < k)
                    .count();
                assert_eq!(t, 100.0 * t_hits as f64 / 10.0);
                assert_eq!(i, 100.0 * i_hits as f64 / 50.0);
            }
        }
    }

    #[test]
    fn ground_truth_validation() {
        assert!(GroundTruth::new(2, vec![0, 0]).is_err());
        assert!(GroundTruth::new(1, vec![1]).is_err());
        assert_eq!(GroundTruth::new(2, vec![1, 0, 1]).unwrap().captions_of(), vec![vec![1], vec![0, 2]]);
    }

    #[test]
    fn five_fold_requires_divisible_count() {
        let gt = GroundTruth::new(12, (0..12).collect()).unwrap();
        let m = sim(Matrix::identity(12));
        assert!(evaluate_similarity(&m, &gt, Protocol::FiveFold1k).is_err());
        assert!(evaluate_similarity(&m, &gt, Protocol::Full).is_ok());
    }
}
