pub mod asm;
pub mod cfg;
pub mod classifier;
pub mod dataset;
pub mod interchange;
pub mod ir;
pub mod labeler;
pub mod labels;
pub mod pipeline;
pub mod preprocess;
pub mod programs;
pub mod virtualizer;
pub mod viz;
