pub mod camera;
pub mod error;
pub mod geometry;
pub mod social_force;
pub mod keypoints;
pub mod scene;
pub mod world;
pub mod sample;
pub mod dataset;
pub mod generate;
