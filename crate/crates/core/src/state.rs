//! On-disk state of one unit.
//!
//! ```text
//! <dir>/aegis.toml        config
//! <dir>/genesis.lock      current lock (canonical text)
//! <dir>/locks.history     earlier locks, oldest first
//! <dir>/charter.iepl      the policy the lock attests to
//! <dir>/ilk.log           structured audit log
//! <dir>/host.salt         hardware-identity salt
//! <dir>/unit.key          runtime signing key
//! <dir>/auctor.key        founding-authority key
//! <dir>/roster.json       validator ids, public keys, behaviours
//! <dir>/validators/*.key  simulated validator keys
//! <dir>/inbox/<id>/       durable validator and gate inboxes
//! <dir>/proposals/        amendment proposals and vote rounds
//! ```

use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use fs2::FileExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, CanonicalError};
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::crypto::{CryptoError, PublicKey, SigningKey};
use crate::ekm::{Gate, GateConfig, GateError, GateParts};
use crate::genesis::{declare_genesis, GenesisLock, HardwareIdentity, TrustAnchors};
use crate::iepl::{self, AmendmentProposal, IeplError, PolicyDocument};
use crate::ilk::{Durability, Ilk, IlkError};
use crate::senatus::{Behavior, InboxDir, SenatusError, ValidatorAgent, ValidatorPool, Vote};

pub const STATE_ENV: &str = "AEGIS_STATE_DIR";
pub const CONFIG_FILE: &str = "aegis.toml";
pub const LOCK_FILE: &str = "genesis.lock";
pub const HISTORY_FILE: &str = "locks.history";
pub const CHARTER_FILE: &str = "charter.iepl";
pub const LOG_FILE: &str = "ilk.log";
pub const UNIT_KEY_FILE: &str = "unit.key";
pub const AUCTOR_KEY_FILE: &str = "auctor.key";
pub const ROSTER_FILE: &str = "roster.json";
pub const DAEMON_ADDR_FILE: &str = "daemon.addr";
pub const WRITER_LOCK_FILE: &str = "writer.lock";
pub const ROOT_PIN_FILE: &str = "root.pin";

#[derive(Debug, Error)]
pub enum StateError {
    #[error("no unit state at {0} (run genesis-init)")]
    NotInitialized(PathBuf),
    #[error("unit state already exists at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("another writer holds {0}")]
    Busy(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        source: CanonicalError,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Policy(#[from] IeplError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Log(#[from] IlkError),
    #[error(transparent)]
    Senatus(#[from] SenatusError),
    #[error("unknown proposal `{0}`")]
    UnknownProposal(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StateError + '_ {
    move |source| StateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Loopback address the daemon listens on.
    pub daemon_addr: String,
    /// Deep log check interval, in decisions.
    pub integrity_interval: u64,
    pub non_attested_threshold: u32,
    /// Roster file, relative to the state directory.
    pub roster: String,
    pub rotation_seed: u64,
    pub durability: Durability,
    pub max_vote_rounds: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            daemon_addr: "127.0.0.1:0".into(),
            integrity_interval: 100,
            non_attested_threshold: crate::egress::DEFAULT_NON_ATTESTED_THRESHOLD,
            roster: ROSTER_FILE.into(),
            rotation_seed: 0x5eed,
            durability: Durability::Fsync,
            max_vote_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub validator_id: String,
    pub public_key: PublicKey,
    #[serde(default)]
    pub behavior: Behavior,
}

/// Written once at init: the founding authority and the genesis lock every
/// later lock must chain back to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootPin {
    pub auctor_public_key: PublicKey,
    pub genesis_digest: crate::crypto::Digest32,
}

/// Stored result of one vote round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub proposal_id: String,
    pub status: ProposalStatus,
    pub votes: Vec<Vote>,
    pub approve: usize,
    pub reject: usize,
    pub recuse: usize,
    pub discarded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_lock_digest: Option<crate::crypto::Digest32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProposalStatus {
    Pending,
    Passed,
    Rejected,
    Failed,
}

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub roster_size: usize,
    pub config: Config,
    pub at: Timestamp,
    /// Founding authority key; generated when absent.
    pub auctor_key: Option<SigningKey>,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            roster_size: 5,
            config: Config::default(),
            at: Timestamp::now(),
            auctor_key: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateDirectory {
    root: PathBuf,
}

/// Holds the single-writer lock for as long as it lives.
#[derive(Debug)]
pub struct WriterGuard(File);

impl Drop for WriterGuard {
    fn drop(&mut self) {
        let _ = FileExt::unlock(&self.0);
    }
}

impl StateDirectory {
    /// Resolves the directory from an explicit path, `AEGIS_STATE_DIR`, or `./aegis-state`.
    pub fn resolve(explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(STATE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("aegis-state"))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates a fresh unit: salt, keys, validator roster, charter and lock.
    pub fn init(
        root: &Path,
        charter: &PolicyDocument,
        opts: InitOptions,
    ) -> Result<(Self, GenesisLock), StateError> {
        if root.join(LOCK_FILE).exists() {
            return Err(StateError::AlreadyInitialized(root.to_path_buf()));
        }
        let sd = Self {
            root: root.to_path_buf(),
        };
        let hash = iepl::seal(charter)?;
        fs::create_dir_all(sd.path("validators")).map_err(io_err(root))?;
        fs::create_dir_all(sd.path("proposals")).map_err(io_err(root))?;
        let hw = HardwareIdentity::load_or_create(root).map_err(io_err(root))?;

        let auctor = opts.auctor_key.clone().unwrap_or_else(SigningKey::generate);
        auctor.write_file(&sd.path(AUCTOR_KEY_FILE))?;
        SigningKey::generate().write_file(&sd.path(UNIT_KEY_FILE))?;

        let mut roster = Vec::new();
        for i in 0..opts.roster_size {
            let id = format!("auctor-{i}");
            let key = SigningKey::generate();
            key.write_file(&sd.path(&format!("validators/{id}.key")))?;
            roster.push(RosterEntry {
                validator_id: id,
                public_key: key.public_key(),
                behavior: Behavior::Honest,
            });
        }
        sd.write_canonical(&opts.config.roster, &roster)?;
        let toml = toml::to_string(&opts.config).map_err(|e| StateError::Config(e.to_string()))?;
        fs::write(sd.path(CONFIG_FILE), toml).map_err(io_err(&sd.path(CONFIG_FILE)))?;

        let lock = declare_genesis(&hw, hash, &auctor, opts.at);
        sd.write_canonical(CHARTER_FILE, charter)?;
        sd.write_canonical(HISTORY_FILE, &Vec::<GenesisLock>::new())?;
        sd.write_canonical(
            ROOT_PIN_FILE,
            &RootPin {
                auctor_public_key: auctor.public_key(),
                genesis_digest: lock.digest(),
            },
        )?;
        sd.write_canonical(LOCK_FILE, &lock)?;
        Ok((sd, lock))
    }

    pub fn open(root: &Path) -> Result<Self, StateError> {
        if !root.join(LOCK_FILE).exists() {
            return Err(StateError::NotInitialized(root.to_path_buf()));
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn write_canonical<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StateError> {
        let path = self.path(name);
        let mut bytes =
            canonical::to_canonical_bytes(value).map_err(|source| StateError::Decode {
                path: path.clone(),
                source,
            })?;
        bytes.push(b'\n');
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn read_canonical<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, StateError> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        canonical::from_canonical_slice(bytes.trim_ascii_end())
            .map_err(|source| StateError::Decode { path, source })
    }

    pub fn config(&self) -> Result<Config, StateError> {
        let path = self.path(CONFIG_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| StateError::Config(e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Config::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn lock(&self) -> Result<GenesisLock, StateError> {
        self.read_canonical(LOCK_FILE)
    }

    pub fn root_pin(&self) -> Result<RootPin, StateError> {
        self.read_canonical(ROOT_PIN_FILE)
    }

    pub fn history(&self) -> Result<Vec<GenesisLock>, StateError> {
        if !self.path(HISTORY_FILE).exists() {
            return Ok(Vec::new());
        }
        self.read_canonical(HISTORY_FILE)
    }

    pub fn charter(&self) -> Result<PolicyDocument, StateError> {
        let path = self.path(CHARTER_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok(iepl::parse(bytes.trim_ascii_end())?)
    }

    pub fn hardware(&self) -> Result<HardwareIdentity, StateError> {
        HardwareIdentity::load(&self.root).map_err(io_err(&self.path(crate::genesis::SALT_FILE)))
    }

    pub fn unit_key(&self) -> Result<SigningKey, StateError> {
        Ok(SigningKey::read_file(&self.path(UNIT_KEY_FILE))?)
    }

    pub fn auctor_key(&self) -> Result<SigningKey, StateError> {
        Ok(SigningKey::read_file(&self.path(AUCTOR_KEY_FILE))?)
    }

    pub fn roster(&self) -> Result<Vec<RosterEntry>, StateError> {
        self.read_canonical(&self.config()?.roster)
    }

    /// Builds the validator pool from the roster and the simulated keys.
    pub fn pool(&self, n: usize) -> Result<ValidatorPool, StateError> {
        let cfg = self.config()?;
        let mut agents = Vec::new();
        for entry in self.roster()? {
            let key = SigningKey::read_file(
                &self.path(&format!("validators/{}.key", entry.validator_id)),
            )?;
            if key.public_key() != entry.public_key {
                return Err(StateError::Config(format!(
                    "key file for {} does not match roster",
                    entry.validator_id
                )));
            }
            agents.push(ValidatorAgent::new(
                &entry.validator_id,
                key,
                entry.behavior,
            ));
        }
        Ok(ValidatorPool::new(agents, n, cfg.rotation_seed)?)
    }

    pub fn inbox(&self) -> Result<InboxDir, StateError> {
        InboxDir::new(&self.path("inbox")).map_err(io_err(&self.path("inbox")))
    }

    /// Takes the exclusive writer lock, failing if another process holds it.
    pub fn writer_lock(&self) -> Result<WriterGuard, StateError> {
        let path = self.path(WRITER_LOCK_FILE);
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.try_lock_exclusive().map_err(|_| StateError::Busy(path))?;
        Ok(WriterGuard(f))
    }

    /// Opens the log and builds a gate, verifying the lock first.
    pub fn gate(&self, clock: Option<Box<dyn Clock>>) -> Result<Gate, StateError> {
        let cfg = self.config()?;
        let policy = self.charter()?;
        let lock = self.lock()?;
        let pool = self.pool(policy.quorum_config.n_validators as usize)?;
        let ilk = Ilk::open(&self.path(LOG_FILE), cfg.durability)?;
        let mut parts = GateParts::new(
            policy.clone(),
            lock,
            self.hardware()?,
            self.unit_key()?,
            ilk,
        );
        let pin = self.root_pin()?;
        let history = self.history()?;
        parts.anchors = TrustAnchors {
            founding_key: Some(pin.auctor_public_key),
            genesis_digest: Some(pin.genesis_digest),
            prior_locks: history,
            validators: pool.registry(),
            quorum: policy.quorum_config,
        };
        parts.pool = Some(pool);
        parts.bus = Some(Box::new(self.inbox()?));
        parts.clock = clock.unwrap_or_else(|| Box::new(SystemClock));
        parts.config = GateConfig {
            integrity_interval: cfg.integrity_interval,
            fail_point: None,
        };
        Ok(Gate::new(parts)?)
    }

    /// Writes the gate's current lock, history and policy.
    pub fn persist(&self, gate: &Gate) -> Result<(), StateError> {
        self.write_canonical(CHARTER_FILE, gate.sealed_policy())?;
        self.write_canonical(HISTORY_FILE, &gate.lock_history())?;
        self.write_canonical(LOCK_FILE, gate.lock())
    }

    pub fn save_proposal(&self, p: &AmendmentProposal) -> Result<(), StateError> {
        self.write_canonical(&format!("proposals/{}.proposal", p.proposal_id), p)
    }

    pub fn proposal(&self, id: &str) -> Result<AmendmentProposal, StateError> {
        let name = format!("proposals/{id}.proposal");
        if !self.path(&name).exists() {
            return Err(StateError::UnknownProposal(id.to_string()));
        }
        self.read_canonical(&name)
    }

    pub fn save_round(&self, r: &RoundRecord) -> Result<(), StateError> {
        self.write_canonical(&format!("proposals/{}.round", r.proposal_id), r)
    }

    pub fn round(&self, id: &str) -> Result<Option<RoundRecord>, StateError> {
        let name = format!("proposals/{id}.round");
        if !self.path(&name).exists() {
            return Ok(None);
        }
        self.read_canonical(&name).map(Some)
    }

    pub fn daemon_addr(&self) -> Option<String> {
        fs::read_to_string(self.path(DAEMON_ADDR_FILE))
            .ok()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eva::ActionProposal;
    use crate::iepl::fixtures::trial_charter;

    #[test]
    fn init_open_and_gate() {
        let dir = tempfile::tempdir().unwrap();
        let (sd, lock) =
            StateDirectory::init(dir.path(), &trial_charter(), InitOptions::default()).unwrap();
        assert!(matches!(
            StateDirectory::init(dir.path(), &trial_charter(), InitOptions::default()),
            Err(StateError::AlreadyInitialized(_))
        ));
        let sd2 = StateDirectory::open(dir.path()).unwrap();
        assert_eq!(sd2.lock().unwrap(), lock);
        assert_eq!(sd.roster().unwrap().len(), 5);
        {
            let _w = sd.writer_lock().unwrap();
            assert!(matches!(sd2.writer_lock(), Err(StateError::Busy(_))));
            let mut g = sd.gate(None).unwrap();
            assert!(g
                .publish(&ActionProposal::new("a", "summarize_document", b"x"))
                .is_committed());
        }
        let g = sd2.gate(None).unwrap();
        assert_eq!(g.state().decisions_count, 1);
    }

    #[test]
    fn missing_state() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            StateDirectory::open(dir.path()),
            Err(StateError::NotInitialized(_))
        ));
    }
}
