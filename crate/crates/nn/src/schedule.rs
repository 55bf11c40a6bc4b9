/// Constant `base_alpha` for the first half of training, then linear decay to zero at `max_epochs`.
pub fn lr_schedule(epoch: usize, max_epochs: usize, base_alpha: f64) -> f64 {
    debug_assert!(epoch < max_epochs, "epoch {epoch} out of range 0..{max_epochs}");
    let max = max_epochs as f64;
    let half = max / 2.0;
    let e = epoch as f64;
    if e <= half {
        base_alpha
    } else {
        base_alpha * ((max - e) / (max - half)).max(0.0)
    }
}
