pub mod audio;
pub mod isochrome;
pub mod qlearn;
