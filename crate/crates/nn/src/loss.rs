/// Binary cross-entropy of `sigmoid(logit)` against target `y`, computed
/// from the logit for numerical stability. Returns `(loss, d loss / d logit)`.
pub fn bce_with_logit(logit: f64, y: f64) -> (f64, f64) {
    // softplus(s) - y s
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    (softplus - y * logit, crate::activation::sigmoid_scalar(logit) - y)
}
