/// Mean of non-negative integers `sum / count`, rounded half-up to two
/// decimals using integer arithmetic so that ties such as `x.xx5` never
/// depend on binary floating point representation.
pub fn round_half_up_2dp(sum: u64, count: u64) -> f64 {
    assert!(count > 0, "mean of zero values");
    // floor((100 * sum / count) + 1/2) == floor((200 * sum + count) / (2 * count))
    let hundredths = (200 * sum + count) / (2 * count);
    hundredths as f64 / 100.0
}
