use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError};

use super::{RegistryClient, RegistryError, VehicleRecord};
use crate::plate::NormalizedPlate;

type Reply = Result<VehicleRecord, RegistryError>;

struct Job {
    plate: NormalizedPlate,
    reply: Sender<Reply>,
}

/// Fixed set of worker threads sharing one client. `submit` blocks while all
/// workers are busy, so at most `workers` lookups are ever in flight.
pub struct LookupPool {
    jobs: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    client: Arc<RegistryClient>,
}

/// Handle to one pending lookup.
#[derive(Debug)]
pub struct Ticket {
    rx: Receiver<Reply>,
}

impl Ticket {
    pub fn try_take(&self) -> Option<Reply> {
        match self.rx.try_recv() {
            Ok(r) => Some(r),
            Err(TryRecvError::Empty) => None,
            Err(TryRecvError::Disconnected) => Some(Err(worker_gone())),
        }
    }

    pub fn wait(self) -> Reply {
        self.rx.recv().unwrap_or_else(|_| Err(worker_gone()))
    }
}

fn worker_gone() -> RegistryError {
    RegistryError::Unavailable { attempts: 0, last_error: "lookup worker exited".into() }
}

impl LookupPool {
    pub fn new(client: Arc<RegistryClient>, workers: usize) -> Self {
        let (tx, rx) = bounded::<Job>(0);
        let workers = (0..workers.max(1))
            .map(|i| {
                let rx = rx.clone();
                let client = Arc::clone(&client);
                std::thread::Builder::new()
                    .name(format!("registry-lookup-{i}"))
                    .spawn(move || {
                        for job in rx {
                            let _ = job.reply.send(client.lookup(&job.plate));
                        }
                    })
                    .expect("spawn lookup worker")
            })
            .collect();
        Self { jobs: Some(tx), workers, client }
    }

    pub fn client(&self) -> &RegistryClient {
        &self.client
    }

    pub fn submit(&self, plate: NormalizedPlate) -> Ticket {
        let (reply, rx) = bounded(1);
        if let Some(jobs) = &self.jobs {
            let _ = jobs.send(Job { plate, reply });
        }
        Ticket { rx }
    }
}

impl Drop for LookupPool {
    fn drop(&mut self) {
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
