//! Finite-difference gradient checks, one test per op.

mod common;

use common::gradcheck::*;

fn run(case: fn() -> Result<f64, String>) {
    match case() {
        Ok(worst) => println!("worst relative error {worst:.3e}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn conv2d() {
    run(conv2d_gradients);
}

#[test]
fn dense() {
    run(dense_gradients);
}

#[test]
fn relu() {
    run(relu_gradients);
}

#[test]
fn sigmoid() {
    run(sigmoid_gradients);
}

#[test]
fn global_avg_pool() {
    run(global_avg_pool_gradients);
}

#[test]
fn channel_scale() {
    run(channel_scale_gradients);
}

#[test]
fn add() {
    run(add_gradients);
}

#[test]
fn concat_channels() {
    run(concat_gradients);
}

#[test]
fn index_add_channels() {
    run(index_add_gradients);
}

#[test]
fn mae_in_both_arguments() {
    run(mae_gradients_in_both_arguments);
}

#[test]
fn residual_block() {
    run(residual_block_gradients);
}

#[test]
fn non_residual_block() {
    run(non_residual_block_gradients);
}
