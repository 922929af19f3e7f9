//! Linear classifier trained by hinge-loss subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `classify(x) = w·x + b > threshold`. A positive verdict means "attack".
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn classify(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }

    /// Fraction of benign samples rejected and malicious samples flagged.
    pub fn accuracy(&self, benign: &[Vec<f64>], malicious: &[Vec<f64>]) -> f64 {
        let n = benign.len() + malicious.len();
        if n == 0 {
            return 0.0;
        }
        let ok = benign.iter().filter(|x| !self.classify(x)).count()
            + malicious.iter().filter(|x| self.classify(x)).count();
        ok as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// L2 regularisation strength.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.01, lambda: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub model: LinearModel,
    pub train_accuracy: f64,
    /// Set when the two classes are indistinguishable; the model then
    /// rejects everything.
    pub degenerate: bool,
}

pub fn train_classifier(
    benign: &[Vec<f64>],
    malicious: &[Vec<f64>],
    params: TrainParams,
) -> Result<TrainedClassifier> {
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::Detector("both classes need at least one sample".into()));
    }
    let dim = benign[0].len();
    if benign.iter().chain(malicious).any(|x| x.len() != dim) {
        return Err(Error::Detector("feature vectors differ in length".into()));
    }

    let same = malicious.iter().all(|m| benign.contains(m)) && benign.iter().all(|b| malicious.contains(b));
    if same {
        let model = LinearModel { weights: vec![0.0; dim], bias: 0.0, threshold: 0.0 };
        let train_accuracy = model.accuracy(benign, malicious);
        return Ok(TrainedClassifier { model, train_accuracy, degenerate: true });
    }

    let mut data: Vec<(&[f64], f64)> = benign
        .iter()
        .map(|x| (x.as_slice(), -1.0))
        .chain(malicious.iter().map(|x| (x.as_slice(), 1.0)))
        .collect();
    // balance the classes so the minority is not ignored
    let wpos = data.len() as f64 / (2.0 * malicious.len() as f64);
    let wneg = data.len() as f64 / (2.0 * benign.len() as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..params.epochs {
        data.shuffle(&mut rng);
        for &(x, y) in &data {
            let margin = y * (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b);
            let cw = if y > 0.0 { wpos } else { wneg };
            for (wi, xi) in w.iter_mut().zip(x) {
                let g = params.lambda * *wi - if margin < 1.0 { cw * y * xi } else { 0.0 };
                *wi -= params.lr * g;
            }
            if margin < 1.0 {
                b += params.lr * cw * y;
            }
        }
    }
    let model = LinearModel { weights: w, bias: b, threshold: 0.0 };
    let train_accuracy = model.accuracy(benign, malicious);
    Ok(TrainedClassifier { model, train_accuracy, degenerate: false })
}

/// Mean held-out accuracy over `k` folds. Samples are shuffled with the
/// training seed and assigned to folds round-robin within each class.
pub fn cross_validate(benign: &[Vec<f64>], malicious: &[Vec<f64>], k: usize, params: TrainParams) -> Result<f64> {
    if k < 2 || benign.len() < k || malicious.len() < k {
        return Err(Error::Detector(format!("{k}-fold validation needs at least {k} samples per class")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
    let mut bi: Vec<usize> = (0..benign.len()).collect();
    let mut mi: Vec<usize> = (0..malicious.len()).collect();
    bi.shuffle(&mut rng);
    mi.shuffle(&mut rng);

    let split = |idx: &[usize], src: &[Vec<f64>], fold: usize| {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (j, &i) in idx.iter().enumerate() {
            if j % k == fold {
                test.push(src[i].clone());
            } else {
                train.push(src[i].clone());
            }
        }
        (train, test)
    };

    let mut total = 0.0;
    for fold in 0..k {
        let (btr, bte) = split(&bi, benign, fold);
        let (mtr, mte) = split(&mi, malicious, fold);
        let c = train_classifier(&btr, &mtr, params)?;
        total += c.model.accuracy(&bte, &mte);
    }
    Ok(total / k as f64)
}
