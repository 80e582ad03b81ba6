use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::view::ApiSessionView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub session_id: String,
    pub status: JobStatus,
    /// Session state after the step, once it succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<ApiSessionView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// HTTP status the step would have answered with directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_status: Option<u16>,
}

/// Step jobs of the running process. Not persisted: a job lost in a restart
/// either completed (and its iteration was saved) or never ran.
#[derive(Default)]
pub(crate) struct JobTable {
    jobs: Mutex<HashMap<String, JobView>>,
}

impl JobTable {
    pub fn start(&self, session_id: &str) -> JobView {
        let job = JobView {
            id: uuid::Uuid::new_v4().simple().to_string(),
            session_id: session_id.to_owned(),
            status: JobStatus::Running,
            session: None,
            error: None,
            error_status: None,
        };
        self.jobs.lock().insert(job.id.clone(), job.clone());
        job
    }

    pub fn finish(&self, id: &str, result: Result<ApiSessionView, ApiError>) {
        let mut jobs = self.jobs.lock();
        let Some(job) = jobs.get_mut(id) else {
            return;
        };
        match result {
            Ok(view) => {
                job.status = JobStatus::Succeeded;
                job.session = Some(view);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error_status = Some(e.status.as_u16());
                job.error = Some(e.message);
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<JobView> {
        self.jobs.lock().get(id).cloned()
    }
}
