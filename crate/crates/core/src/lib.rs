//! Reconstructing structured political biographies from web evidence.
//!
//! The pipeline has three stages. An extraction run pairs a planning
//! supervisor with a searching worker to gather and archive evidence for one
//! official ([`orchestrator`]), the coder maps the gathered corpus to a
//! section-tagged biography ([`coder`]), and multiple candidate biographies
//! are consolidated by consensus plus fact-checking into a ground truth
//! ([`cgt`]) against which candidates are scored ([`evaluation`]).
//!
//! All model, search, and fetch traffic goes through the [`gateways`]
//! abstraction, so any run can be replayed deterministically from a scripted
//! transcript without network access; [`fixtures`] ships one complete
//! recorded run used by the integration tests.

pub mod archive;
pub mod biography;
pub mod cgt;
pub mod claims;
pub mod coder;
pub mod evaluation;
pub mod fixtures;
pub mod gateways;
pub mod orchestrator;
