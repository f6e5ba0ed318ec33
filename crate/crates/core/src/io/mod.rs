pub mod archive;
pub mod cmeb;

pub use archive::Archive;
