use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub held_out_runner_ids: Vec<String>,
    pub train_session_ids: Vec<String>,
    pub test_session_ids: Vec<String>,
}

/// Runner-grouped splits over `(session_id, runner_id)` pairs.
///
/// Runners are shuffled by `seed`, then split `i` holds out positions
/// `i·k … i·k + k − 1` (wrapping), giving `⌈n/k⌉` splits that together hold
/// out every runner.
pub fn make_cv_splits(
    sessions: &[(String, String)],
    k_holdout: usize,
    seed: u64,
) -> Result<Vec<CvSplit>, TrainError> {
    let mut runners: Vec<String> = sessions.iter().map(|(_, r)| r.clone()).collect();
    runners.sort();
    runners.dedup();
    if k_holdout == 0 || runners.len() < k_holdout + 1 {
        return Err(TrainError::Config(format!(
            "holding out {k_holdout} runner(s) needs at least {} distinct runners, found {}",
            k_holdout + 1,
            runners.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    runners.shuffle(&mut rng);
    let n = runners.len();
    Ok((0..n.div_ceil(k_holdout))
        .map(|i| {
            let mut held: Vec<String> = (0..k_holdout)
                .map(|j| runners[(i * k_holdout + j) % n].clone())
                .collect();
            held.sort();
            let (test, train): (Vec<_>, Vec<_>) =
                sessions.iter().partition(|(_, r)| held.contains(r));
            CvSplit {
                held_out_runner_ids: held,
                train_session_ids: train.into_iter().map(|(s, _)| s.clone()).collect(),
                test_session_ids: test.into_iter().map(|(s, _)| s.clone()).collect(),
            }
        })
        .collect())
}
