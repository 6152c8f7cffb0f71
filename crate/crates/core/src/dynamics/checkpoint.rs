//! Save/resume for long runs.
//!
//! A checkpoint is a directory holding `checkpoint.json` (parameters, clock,
//! extrema, mean flow, and the checksum of the binary blob) plus `state.bin`
//! (the spectral stacks, and the multistep history when one is in flight).
//! Resuming rebuilds the integrator so that the continued run is bit-exact:
//! the same steps, the same samples, the same termination as the
//! uninterrupted run.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Extrema, Integrator, Scheme, SimParams};
use crate::error::{Error, Result};
use crate::grid::{ChannelGrid, ModeStack};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"PKSCKPT1";
const VERSION: u32 = 1;
const MANIFEST_FILE: &str = "checkpoint.json";
const BLOB_FILE: &str = "state.bin";

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct Manifest<T: Real> {
    version: u32,
    nx: usize,
    ny: usize,
    dealias: bool,
    params: SimParams<T>,
    t: T,
    dt: T,
    steps: u64,
    dt_halvings: u32,
    initial_linf: T,
    extrema: Extrema<T>,
    u01: Vec<T>,
    history_u01: Option<Vec<T>>,
    history_e_u01: Option<Vec<T>>,
    blob: String,
    blob_sha256: String,
}

fn push_stack<T: Real>(buf: &mut Vec<u8>, s: &ModeStack<T>) {
    for v in s.data().iter() {
        buf.extend_from_slice(&v.re.as_f64().to_le_bytes());
        buf.extend_from_slice(&v.im.as_f64().to_le_bytes());
    }
}

fn read_stack<T: Real>(
    grid: &Arc<ChannelGrid<T>>,
    bytes: &[u8],
    off: &mut usize,
) -> Result<ModeStack<T>> {
    let mut s = ModeStack::zeros(grid);
    for v in s.data_mut().iter_mut() {
        let re = f64::from_le_bytes(bytes[*off..*off + 8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(bytes[*off + 8..*off + 16].try_into().expect("8 bytes"));
        *v = Complex::new(T::lit(re), T::lit(im));
        *off += 16;
    }
    Ok(s)
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

impl<T: Real> Integrator<T> {
    /// Write the full integrator state into `dir` (created if needed).
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let grid = self.grid();
        let mut blob = Vec::new();
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&VERSION.to_le_bytes());
        blob.extend_from_slice(&(grid.nx() as u32).to_le_bytes());
        blob.extend_from_slice(&(grid.ny() as u32).to_le_bytes());
        let hist = self.history_parts();
        let flags: u32 = if hist.is_some() { 1 } else { 0 };
        blob.extend_from_slice(&flags.to_le_bytes());
        let (n1, n2, omega) = self.modes();
        for s in [n1, n2, omega] {
            push_stack(&mut blob, s);
        }
        let (history_u01, history_e_u01) =
            if let Some((h1, h2, ho, hu, e1, e2, eo, eu)) = hist {
                for s in [h1, h2, ho, e1, e2, eo] {
                    push_stack(&mut blob, s);
                }
                (Some(hu.to_vec()), Some(eu.to_vec()))
            } else {
                (None, None)
            };

        let manifest = Manifest {
            version: VERSION,
            nx: grid.nx(),
            ny: grid.ny(),
            dealias: grid.dealias(),
            params: self.params().clone(),
            t: self.t(),
            dt: self.current_dt(),
            steps: self.steps(),
            dt_halvings: self.dt_halvings(),
            initial_linf: self.initial_linf(),
            extrema: *self.extrema(),
            u01: self.u01().to_vec(),
            history_u01,
            history_e_u01,
            blob: BLOB_FILE.to_string(),
            blob_sha256: sha_hex(&blob),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(format!("could not encode manifest: {e}")))?;
        std::fs::write(dir.join(BLOB_FILE), &blob)?;
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }

    /// Rebuild an integrator from a checkpoint directory. The continuation
    /// is bit-exact with respect to the run that wrote the checkpoint.
    pub fn resume_checkpoint(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&manifest_path)?;
        let m: Manifest<T> = serde_json::from_str(&raw).map_err(|e| {
            Error::Checkpoint(format!("{}: bad manifest: {e}", manifest_path.display()))
        })?;
        if m.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                m.version
            )));
        }
        if m.blob.contains('/') || m.blob.contains('\\') {
            return Err(Error::Checkpoint(format!(
                "blob name {:?} must be a plain file name",
                m.blob
            )));
        }
        let blob_path = dir.join(&m.blob);
        let blob = std::fs::read(&blob_path)?;
        if sha_hex(&blob) != m.blob_sha256 {
            return Err(Error::Checkpoint(format!(
                "{}: checksum mismatch, checkpoint is corrupt",
                blob_path.display()
            )));
        }
        if blob.len() < 24 || &blob[0..8] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: not a state blob",
                blob_path.display()
            )));
        }
        let word = |at: usize| u32::from_le_bytes(blob[at..at + 4].try_into().expect("4 bytes"));
        if word(8) != VERSION {
            return Err(Error::Checkpoint("state blob version mismatch".into()));
        }
        let (nx, ny) = (word(12) as usize, word(16) as usize);
        let flags = word(20);
        if nx != m.nx || ny != m.ny {
            return Err(Error::Checkpoint(
                "state blob grid does not match the manifest".into(),
            ));
        }
        let has_history = flags & 1 == 1;
        if has_history != (m.history_u01.is_some() && m.history_e_u01.is_some()) {
            return Err(Error::Checkpoint(
                "manifest and state blob disagree about multistep history".into(),
            ));
        }
        let grid = ChannelGrid::<T>::new(nx, ny, m.dealias)?;
        let stack_len = (grid.kmax() + 1) * (ny + 1) * 16;
        let n_stacks = if has_history { 9 } else { 3 };
        if blob.len() != 24 + n_stacks * stack_len {
            return Err(Error::Checkpoint(format!(
                "{}: expected {} bytes, found {}",
                blob_path.display(),
                24 + n_stacks * stack_len,
                blob.len()
            )));
        }
        if m.u01.len() != ny + 1 {
            return Err(Error::Checkpoint(
                "mean flow profile length does not match the grid".into(),
            ));
        }

        let mut off = 24;
        let n1 = read_stack(&grid, &blob, &mut off)?;
        let n2 = read_stack(&grid, &blob, &mut off)?;
        let omega = read_stack(&grid, &blob, &mut off)?;
        let mut me = Integrator::restore(
            &grid,
            m.params.clone(),
            n1,
            n2,
            omega,
            m.u01,
            m.t,
            m.dt,
            m.steps,
            m.dt_halvings,
            m.initial_linf,
            m.extrema,
        )?;
        if has_history {
            if m.params.scheme != Scheme::Sbdf2 {
                return Err(Error::Checkpoint(
                    "checkpoint carries multistep history but the scheme is single-step".into(),
                ));
            }
            let h1 = read_stack(&grid, &blob, &mut off)?;
            let h2 = read_stack(&grid, &blob, &mut off)?;
            let ho = read_stack(&grid, &blob, &mut off)?;
            let e1 = read_stack(&grid, &blob, &mut off)?;
            let e2 = read_stack(&grid, &blob, &mut off)?;
            let eo = read_stack(&grid, &blob, &mut off)?;
            let hu = m.history_u01.expect("history profile present");
            let eu = m.history_e_u01.expect("history flux present");
            if hu.len() != ny + 1 || eu.len() != ny + 1 {
                return Err(Error::Checkpoint(
                    "history profile length does not match the grid".into(),
                ));
            }
            me.install_history(h1, h2, ho, hu, e1, e2, eo, eu);
        }
        Ok(me)
    }
}
