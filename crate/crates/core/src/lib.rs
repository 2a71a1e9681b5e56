//! Joint object segmentation and localization by coupled discriminative
//! clustering.
//!
//! Each frame carries superpixels (segmentation variables `y`) and candidate
//! boxes (selection variables `z`). The crate builds the quadratic objective
//! from discriminative, spatial, foreground-histogram and saliency terms,
//! assembles the linear constraints that tie `y` to the selected box, solves
//! the convex relaxation and rounds it back to one box and one mask per
//! frame.
//!
//! ```no_run
//! use fgcluster::instance::synth::{synth_instance, SynthSpec};
//! use fgcluster::pipeline::{run_and_evaluate, RunConfig};
//!
//! let inst = synth_instance(&SynthSpec::default(), 7)?;
//! let (out, report) = run_and_evaluate(&inst, &RunConfig::default())?;
//! println!("{:?} {:?}", out.boxes, report.localization);
//! # Ok::<(), fgcluster::Error>(())
//! ```

pub mod constraints;
pub mod discriminative;
pub mod error;
pub mod evaluation;
pub mod foreground;
pub mod instance;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod qp;
pub mod rounding;
pub mod spatial;

pub use error::{Error, Result};
