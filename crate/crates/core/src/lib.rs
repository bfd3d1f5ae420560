//! Manifold geometry of memorization.
//!
//! [`geometry`] estimates the linear classification capacity, radius and
//! dimension of object manifolds by mean-field theory; [`empirical`] checks
//! the capacity by direct separability tests. [`synthdata`], [`net`],
//! [`graddecomp`] and [`experiments`] form a small laboratory: permuted-label
//! sphere datasets, a hand-written ReLU network with checkpoints, the
//! label-dependent/independent gradient split, and experiment drivers with
//! CSV/JSON/SVG output.
//!
//! ```
//! use memgeom::geometry::alpha_ball;
//!
//! assert!((alpha_ball(0.0, 3.0).unwrap() - 2.0).abs() < 1e-12);
//! ```

mod binfmt;
pub mod empirical;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod graddecomp;
pub mod net;
pub mod rng;
pub mod synthdata;

pub use error::{Error, ErrorKind, Result};
pub use geometry::ManifoldSet;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(geometry, "geometry.md");
    chapter!(empirical, "empirical.md");
    chapter!(data, "data.md");
    chapter!(training, "training.md");
    chapter!(gradients, "gradients.md");
    chapter!(experiments, "experiments.md");
    chapter!(formats, "formats.md");
}
