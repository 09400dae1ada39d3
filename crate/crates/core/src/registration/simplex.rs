//! Nelder–Mead downhill simplex.

#[derive(Debug, Clone, Copy)]
pub struct SimplexSettings {
    pub max_iterations: usize,
    /// Stop once every vertex lies within this distance of the best one.
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(vertices: &[Vec<f64>], best: usize) -> f64 {
    vertices
        .iter()
        .map(|v| {
            v.iter()
                .zip(&vertices[best])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Minimise `f` from `start` with an axis-aligned initial simplex of edge
/// `step[i]`. Non-finite objective values are treated as +∞, so the
/// objective can reject infeasible points by returning `f64::INFINITY`.
pub fn minimize<F>(mut f: F, start: &[f64], step: &[f64], settings: SimplexSettings) -> SimplexOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    vertices.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step[i];
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        // stable sort keeps the earlier vertex first on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        vertices = order.iter().map(|&i| vertices[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&vertices, 0) < settings.tolerance {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| vertices[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + coef * (vertices[n][k] - centroid[k]))
                .collect()
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                vertices[n] = expanded;
                values[n] = fe;
            } else {
                vertices[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            vertices[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(-0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            vertices[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> = (0..n)
                .map(|k| vertices[0][k] + 0.5 * (vertices[i][k] - vertices[0][k]))
                .collect();
            values[i] = eval(&shrunk);
            vertices[i] = shrunk;
        }
    }
    SimplexOutcome {
        x: vertices[0].clone(),
        value: values[0],
        iterations,
        converged,
    }
}
