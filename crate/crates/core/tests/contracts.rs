mod common;

#[test]
fn main_head_loss_sends_exactly_zero_gradient_into_h_perp() {
    common::contracts::main_head_loss_sends_exactly_zero_gradient_into_h_perp();
}

#[test]
fn grl_flips_representation_gradient_but_not_discriminator_gradient() {
    common::contracts::grl_flips_representation_gradient_but_not_discriminator_gradient();
}

#[test]
fn total_loss_pushes_h_perp_up_the_discriminator_loss() {
    common::contracts::total_loss_pushes_h_perp_up_the_discriminator_loss();
}
