//! Linear soft-margin SVM trained by full-batch subgradient descent on the
//! L2-regularized hinge loss.

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    /// L2 regularization strength (the bias is not regularized).
    pub lambda: f64,
    pub epochs: usize,
    /// Base step size; epoch `t` uses `step / sqrt(t)`.
    pub step: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { lambda: 1e-3, epochs: 200, step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    /// Fit on `xs`/`ys`. Full-batch subgradient steps with a `1/sqrt(t)`
    /// schedule; the iterate with the lowest objective is kept, which makes
    /// training deterministic and insensitive to end-of-run oscillation.
    pub fn fit(xs: &[Vec<f64>], ys: &[bool], params: &SvmParams) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty(), "cannot fit an svm on zero samples");
        let d = xs[0].len();
        let n = xs.len() as f64;
        let signs: Vec<f64> = ys.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut best = (f64::INFINITY, w.clone(), b);

        for t in 1..=params.epochs {
            // Margins, objective, and the subgradient in one pass.
            let mut grad_w = w.iter().map(|wi| params.lambda * wi).collect::<Vec<f64>>();
            let mut grad_b = 0.0;
            let mut hinge_sum = 0.0;
            for (x, &y) in xs.iter().zip(&signs) {
                let margin = y * (dot(&w, x) + b);
                if margin < 1.0 {
                    hinge_sum += 1.0 - margin;
                    for (g, xi) in grad_w.iter_mut().zip(x) {
                        *g -= y * xi / n;
                    }
                    grad_b -= y / n;
                }
            }
            let objective =
                0.5 * params.lambda * dot(&w, &w) + hinge_sum / n;
            if objective < best.0 {
                best = (objective, w.clone(), b);
            }

            let eta = params.step / (t as f64).sqrt();
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= eta * g;
            }
            b -= eta * grad_b;
        }

        // Final iterate may beat every recorded one.
        let mut hinge_sum = 0.0;
        for (x, &y) in xs.iter().zip(&signs) {
            hinge_sum += (1.0 - y * (dot(&w, x) + b)).max(0.0);
        }
        let objective = 0.5 * params.lambda * dot(&w, &w) + hinge_sum / n;
        if objective < best.0 {
            best = (objective, w, b);
        }

        LinearSvm { weights: best.1, bias: best.2 }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
