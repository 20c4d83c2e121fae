pub mod baselines;
pub mod bits;
pub mod bloomier;
pub mod dictionary;
pub mod harness;
pub mod kv_reduction;
pub mod lazysort;
pub mod mathkit;
pub mod slot_model;
pub mod transfer_tree;
pub mod workload;
pub mod xor_demo;
