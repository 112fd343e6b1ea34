//! M/M/1 response times for local processing and offload forwarding, and the
//! closed-form share of arrivals a node can admit on its own.

use thiserror::Error;

use crate::model::OffloadMatrix;

/// Service rates within this distance of the offered load count as saturated.
pub const SATURATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("queue at node {destination:?} is unstable: load {load} >= service rate {service_rate}")]
    Unstable {
        destination: Option<usize>,
        load: f64,
        service_rate: f64,
    },
    #[error("arrival rate is zero; admitted share is undefined")]
    DegenerateArrival,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Mean sojourn time of an M/M/1 queue serving `alpha * lambda` requests/s
/// at `service_rate`.
pub fn response_time_local(alpha: f64, lambda: f64, service_rate: f64) -> Result<f64, QueueError> {
    if !(0.0..=1.0).contains(&alpha) || lambda < 0.0 || service_rate <= 0.0 {
        return Err(QueueError::InvalidInput(format!(
            "alpha={alpha}, lambda={lambda}, service_rate={service_rate}"
        )));
    }
    let load = alpha * lambda;
    mm1(load, service_rate, None)
}

fn mm1(load: f64, service_rate: f64, destination: Option<usize>) -> Result<f64, QueueError> {
    let headroom = service_rate - load;
    if headroom <= SATURATION_EPS {
        return Err(QueueError::Unstable {
            destination,
            load,
            service_rate,
        });
    }
    Ok(1.0 / headroom)
}

/// Mean response time seen by node `i`'s admitted requests of one service.
///
/// Each destination `m` with `alpha[i][m] > 0` contributes its RTT plus the
/// M/M/1 delay under the aggregate load every sender places on it, weighted
/// by `alpha[i][m] / sum_m alpha[i][m]`. A node that admits nothing has zero
/// response time.
pub fn response_time_forwarding(
    i: usize,
    offload: &OffloadMatrix,
    capacities: &[f64],
    arrivals: &[f64],
    rtt: &[Vec<f64>],
) -> Result<f64, QueueError> {
    let n = offload.size();
    if i >= n || capacities.len() != n || arrivals.len() != n || rtt.len() != n {
        return Err(QueueError::InvalidInput("dimension mismatch".into()));
    }
    let row = &offload.alpha[i];
    let admitted: f64 = row.iter().sum();
    if admitted <= 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (m, &share) in row.iter().enumerate() {
        if share <= 0.0 {
            continue;
        }
        let tau = if m == i { 0.0 } else { rtt[i][m] };
        let load = offload.load_at(m, arrivals);
        total += share * (tau + mm1(load, capacities[m], Some(m))?);
    }
    Ok(total / admitted)
}

/// Largest share of `lambda` a node can serve alone within `theta`, given
/// `energy` units at `unit_energy` per processing unit and `unit_rate`
/// requests/s per unit. Clamped to `[0, 1]`.
pub fn optimal_local_fraction(
    energy: f64,
    unit_energy: f64,
    unit_rate: f64,
    lambda: f64,
    theta: f64,
) -> Result<f64, QueueError> {
    if energy < 0.0 || unit_energy <= 0.0 || unit_rate < 0.0 || lambda < 0.0 || theta <= 0.0 {
        return Err(QueueError::InvalidInput(format!(
            "energy={energy}, unit_energy={unit_energy}, unit_rate={unit_rate}, lambda={lambda}, theta={theta}"
        )));
    }
    local_fraction_for_capacity(unit_rate * energy / unit_energy, lambda, theta)
}

/// [`optimal_local_fraction`] expressed directly in terms of the service rate.
pub fn local_fraction_for_capacity(capacity: f64, lambda: f64, theta: f64) -> Result<f64, QueueError> {
    if lambda == 0.0 {
        return Err(QueueError::DegenerateArrival);
    }
    let raw = capacity / lambda - 1.0 / (theta * lambda);
    Ok(raw.clamp(0.0, 1.0))
}

/// Requests/s a node serves alone within `theta`: `alpha* * lambda`, or zero
/// when there is no workload.
pub fn local_admitted_load(capacity: f64, lambda: f64, theta: f64) -> f64 {
    match local_fraction_for_capacity(capacity, lambda, theta) {
        Ok(a) => a * lambda,
        Err(_) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn local_examples() {
        assert!(close(response_time_local(1.0, 40.0, 50.0).unwrap(), 0.1));
        assert!(close(response_time_local(0.0, 40.0, 50.0).unwrap(), 0.02));
        assert!(matches!(
            response_time_local(1.0, 50.0, 50.0),
            Err(QueueError::Unstable { .. })
        ));
    }

    #[test]
    fn forwarding_half_split() {
        // 0.5 * 1/(30-20) + 0.5 * (0.02 + 1/(40-20)) = 0.085
        let offload = OffloadMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.0, 0.0]]);
        let rtt = vec![vec![0.0, 0.02], vec![0.02, 0.0]];
        let r = response_time_forwarding(0, &offload, &[30.0, 40.0], &[40.0, 0.0], &rtt).unwrap();
        assert!((r - 0.085).abs() < 1e-12);
    }

    #[test]
    fn forwarding_everything_to_loaded_neighbour() {
        // 40 req/s arriving at a 50 req/s neighbour 20 ms away: 0.02 + 0.1.
        let offload = OffloadMatrix::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        let rtt = vec![vec![0.0, 0.02], vec![0.02, 0.0]];
        let r = response_time_forwarding(0, &offload, &[10.0, 50.0], &[40.0, 0.0], &rtt).unwrap();
        assert!((r - 0.12).abs() < 1e-12);
    }

    #[test]
    fn forwarding_names_saturated_destination() {
        let offload = OffloadMatrix::from_rows(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let rtt = vec![vec![0.0, 0.02], vec![0.02, 0.0]];
        let err = response_time_forwarding(0, &offload, &[10.0, 50.0], &[30.0, 20.0], &rtt).unwrap_err();
        assert!(matches!(
            err,
            QueueError::Unstable {
                destination: Some(1),
                ..
            }
        ));
    }

    #[test]
    fn forwarding_nothing_matches_local() {
        let offload = OffloadMatrix::from_rows(vec![vec![0.3, 0.0], vec![0.0, 0.0]]);
        let rtt = vec![vec![0.0, 0.02], vec![0.02, 0.0]];
        let fwd = response_time_forwarding(0, &offload, &[50.0, 40.0], &[100.0, 0.0], &rtt).unwrap();
        let local = response_time_local(0.3, 100.0, 50.0).unwrap();
        assert!((fwd - local).abs() < 1e-12);
    }

    #[test]
    fn closed_form_examples() {
        let a = optimal_local_fraction(10.0, 2.0, 10.0, 100.0, 0.05).unwrap();
        assert!((a - 0.3).abs() < 1e-12);
        assert!((response_time_local(a, 100.0, 50.0).unwrap() - 0.05).abs() < 1e-12);

        assert_eq!(optimal_local_fraction(20.0, 1.0, 10.0, 50.0, 0.1).unwrap(), 1.0);
        // capacity 5 req/s can never meet a 0.1 s deadline (needs > 10)
        assert_eq!(optimal_local_fraction(1.0, 2.0, 10.0, 50.0, 0.1).unwrap(), 0.0);
        assert_eq!(
            optimal_local_fraction(1.0, 1.0, 10.0, 0.0, 0.1),
            Err(QueueError::DegenerateArrival)
        );
    }

    proptest! {
        #[test]
        fn closed_form_agrees_with_bisection(
            lambda in 1.0f64..500.0,
            theta in 0.01f64..0.5,
            cap_frac in 0.05f64..0.95,
        ) {
            // Pick a capacity that keeps the clamps inactive.
            let capacity = 1.0 / theta + cap_frac * lambda;
            let alpha = local_fraction_for_capacity(capacity, lambda, theta).unwrap();
            prop_assume!(alpha > 1e-6 && alpha < 1.0 - 1e-6);
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                match response_time_local(mid, lambda, capacity) {
                    Ok(r) if r <= theta => lo = mid,
                    _ => hi = mid,
                }
            }
            prop_assert!((lo - alpha).abs() < 1e-9);
        }

        #[test]
        fn forwarding_is_monotone(
            a in 0.0f64..0.5, b in 0.0f64..0.5, c in 0.0f64..0.4,
            l0 in 1.0f64..40.0, l1 in 1.0f64..40.0,
            cap0 in 60.0f64..120.0, cap1 in 60.0f64..120.0,
            bump in 0.001f64..0.05,
        ) {
            let rtt = vec![vec![0.0, 0.02], vec![0.02, 0.0]];
            let base = OffloadMatrix::from_rows(vec![vec![a, b], vec![0.0, c]]);
            let r0 = response_time_forwarding(0, &base, &[cap0, cap1], &[l0, l1], &rtt).unwrap();
            // more arrivals at a neighbour sharing destination 1
            let r1 = response_time_forwarding(0, &base, &[cap0, cap1], &[l0, l1 + 5.0], &rtt).unwrap();
            prop_assert!(r1 >= r0 - 1e-12);
            // more capacity anywhere used strictly helps
            if a > 0.0 {
                let r2 = response_time_forwarding(0, &base, &[cap0 + 1.0, cap1], &[l0, l1], &rtt).unwrap();
                prop_assert!(r2 < r0);
            }
            // a neighbour pushing more load onto node 1
            let more = OffloadMatrix::from_rows(vec![vec![a, b], vec![0.0, c + bump]]);
            let r3 = response_time_forwarding(0, &more, &[cap0, cap1], &[l0, l1], &rtt).unwrap();
            prop_assert!(r3 >= r0 - 1e-12);
        }

        #[test]
        fn identity_offload_collapses_to_local(lambda in 0.0f64..90.0, cap in 100.0f64..200.0) {
            let offload = OffloadMatrix::from_rows(vec![vec![1.0]]);
            let fwd = response_time_forwarding(0, &offload, &[cap], &[lambda], &[vec![0.0]]).unwrap();
            let local = response_time_local(1.0, lambda, cap).unwrap();
            prop_assert!((fwd - local).abs() < 1e-12);
        }
    }
}
