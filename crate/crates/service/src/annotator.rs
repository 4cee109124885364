use std::sync::Arc;
use std::time::{Duration, Instant};

use nerloop_core::annotations::LabeledParagraph;
use nerloop_core::workflow::{Annotator, AnnotatorError};

use crate::service::ReviewService;

/// Hands each round to human reviewers and blocks until they finish it.
pub struct ServiceAnnotator {
    service: Arc<ReviewService>,
    poll: Duration,
    timeout: Option<Duration>,
}

impl ServiceAnnotator {
    pub fn new(service: Arc<ReviewService>) -> Self {
        Self {
            service,
            poll: Duration::from_millis(500),
            timeout: None,
        }
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    /// Gives up on a round after `timeout`. Without one it waits forever.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

impl Annotator for ServiceAnnotator {
    fn verify(
        &mut self,
        round: usize,
        silver: &[LabeledParagraph],
    ) -> Result<Vec<LabeledParagraph>, AnnotatorError> {
        self.service
            .start_round(round, silver)
            .map_err(|e| AnnotatorError(e.to_string()))?;
        let started = Instant::now();
        loop {
            if let Some(done) = self.service.results(round) {
                return Ok(done);
            }
            if self.timeout.is_some_and(|t| started.elapsed() >= t) {
                let p = self.service.progress();
                return Err(AnnotatorError(format!(
                    "round {round} timed out with {} of {} tasks done",
                    p.done, p.total
                )));
            }
            std::thread::sleep(self.poll);
        }
    }
}
