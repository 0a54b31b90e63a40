//! Runtime governance for autonomous agents: a policy-sealed trust root, a
//! proof-gated publish boundary, a hash-chained audit log and a quorum
//! amendment protocol.

pub mod canonical;
pub mod clock;
pub mod crypto;
pub mod daemon;
pub mod egress;
pub mod ekm;
pub mod eva;
pub mod genesis;
pub mod iepl;
pub mod ilk;
pub mod poc;
pub mod senatus;
pub mod state;

pub use clock::{Clock, FixedClock, SystemClock, Timestamp};
pub use crypto::{Digest32, PolicyHash, PublicKey, Signature, SigningKey};
pub use ekm::{Gate, GateParts, Mode, PublishOutcome, ShutdownCertificate, VetoReason};
pub use eva::{ActionProposal, Eva, Verdict};
pub use genesis::{declare_genesis, verify_genesis, GenesisLock, GenesisVerdict, HardwareIdentity};
pub use iepl::{AmendmentEdit, AmendmentProposal, PolicyDocument, QuorumConfig};
pub use ilk::{verify_chain, ChainedLogEntry, Ilk};
