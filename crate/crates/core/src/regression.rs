//! Ordinary least squares via Householder QR, with classical standard errors.

use std::collections::HashMap;
use std::fmt::Write as _;

use statrs::function::beta::beta_reg;

use crate::corpus::CleanListing;
use crate::error::{Error, Result};
use crate::geo::DistanceRecord;
use crate::topics::ThetaTable;

/// Design matrix and response, one row per listing.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub listing_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    /// Joined rows dropped for a missing covariate.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DesignOptions {
    /// Enter rent in thousands instead of raw currency units.
    pub rent_per_thousand: bool,
}

/// Join distances (response = relative distance) with listing covariates and
/// topic proportions. The first topic column is the omitted baseline.
///
/// Rows are the distance records whose listing id appears in `theta`; an
/// empty join is an error. Joined rows lacking any covariate are dropped.
pub fn build_design(
    listings: &[CleanListing],
    distances: &[DistanceRecord],
    theta: &ThetaTable,
    options: DesignOptions,
) -> Result<Design> {
    let by_id: HashMap<&str, &CleanListing> = listings.iter().map(|l| (l.id(), l)).collect();
    let rent_name = if options.rent_per_thousand {
        "rent_per_1000"
    } else {
        "rent"
    };
    let mut columns: Vec<String> = ["intercept", "bedrooms", "bathrooms", rent_name, "square_footage"]
        .map(String::from)
        .to_vec();
    columns.extend(theta.topics.iter().skip(1).cloned());

    let mut design = Design {
        columns,
        listing_ids: Vec::new(),
        rows: Vec::new(),
        response: Vec::new(),
        dropped: Vec::new(),
    };
    let mut joined = 0;
    for d in distances {
        let Some(topics) = theta.rows.get(&d.listing_id) else {
            continue;
        };
        joined += 1;
        let covariates = by_id.get(d.listing_id.as_str()).and_then(|l| {
            let r = &l.raw;
            let rent = r.rent? / if options.rent_per_thousand { 1000.0 } else { 1.0 };
            Some([r.bedrooms?, r.bathrooms?, rent, r.square_footage?])
        });
        let topics_ok = topics.len() == theta.topics.len() && topics.iter().all(|p| (0.0..=1.0).contains(p));
        match covariates {
            Some(c) if topics_ok && c.iter().all(|x| x.is_finite()) && d.relative.is_finite() => {
                let mut row = Vec::with_capacity(design.columns.len());
                row.push(1.0);
                row.extend(c);
                row.extend(&topics[1..]);
                design.rows.push(row);
                design.response.push(d.relative);
                design.listing_ids.push(d.listing_id.clone());
            }
            _ => design.dropped.push(d.listing_id.clone()),
        }
    }
    if joined == 0 {
        return Err(Error::InvalidInput(
            "distances and topic proportions share no listing ids".into(),
        ));
    }
    Ok(design)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_used: usize,
    pub n_dropped: usize,
    pub df: usize,
    pub rss: f64,
    pub r_squared: f64,
}

/// Relative threshold below which a column's residual norm counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Householder QR of an n×p column-major matrix. Returns the reflected
/// matrix (R in the upper triangle), reflector vectors and their scalings.
struct Qr {
    n: usize,
    p: usize,
    /// Column-major; R sits in rows 0..p.
    a: Vec<f64>,
    /// Householder vectors v_k (length n, zeros above k) with H_k = I − τ v vᵀ.
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl Qr {
    fn col(&self, j: usize) -> &[f64] {
        &self.a[j * self.n..(j + 1) * self.n]
    }

    fn apply(&self, (v, tau): &(Vec<f64>, f64), x: &mut [f64], from: usize) {
        let dot: f64 = (from..self.n).map(|i| v[i] * x[i]).sum();
        let s = tau * dot;
        for i in from..self.n {
            x[i] -= s * v[i];
        }
    }

    /// Factor, or report every column that is a linear combination of
    /// earlier independent columns together with the columns it depends on.
    #[allow(clippy::needless_range_loop)]
    fn factor(rows: &[Vec<f64>], p: usize) -> std::result::Result<Qr, Vec<usize>> {
        let n = rows.len();
        let mut a = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for j in 0..p {
                a[j * n + i] = row[j];
            }
        }
        let norms: Vec<f64> = (0..p)
            .map(|j| a[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut qr = Qr {
            n,
            p,
            a,
            reflectors: Vec::with_capacity(p),
        };
        let mut accepted: Vec<usize> = Vec::new();
        let mut collinear: Vec<usize> = Vec::new();

        for j in 0..p {
            let r = accepted.len();
            let mut col = qr.col(j).to_vec();
            for h in &qr.reflectors {
                qr.apply(h, &mut col, 0);
            }
            let tail: f64 = col[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
            if tail <= RANK_TOL * norms[j].max(f64::MIN_POSITIVE) || norms[j] == 0.0 {
                // Express column j in terms of the accepted columns: R_acc c = col[0..r].
                let mut c = vec![0.0; r];
                for i in (0..r).rev() {
                    let mut s = col[i];
                    for (k, ck) in c.iter().enumerate().skip(i + 1) {
                        s -= qr.a[accepted[k] * n + i] * ck;
                    }
                    c[i] = s / qr.a[accepted[i] * n + i];
                }
                let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                collinear.push(j);
                for (k, ck) in c.iter().enumerate() {
                    if ck.abs() > 1e-8 * scale.max(1e-300) {
                        collinear.push(accepted[k]);
                    }
                }
                qr.a[j * n..(j + 1) * n].copy_from_slice(&col);
                continue;
            }
            // Reflect col[r..] onto −sign(col[r])·‖·‖ e_r.
            let alpha = if col[r] >= 0.0 { -tail } else { tail };
            let mut v = vec![0.0; n];
            v[r] = col[r] - alpha;
            v[r + 1..].copy_from_slice(&col[r + 1..]);
            let vnorm2: f64 = v[r..].iter().map(|x| x * x).sum();
            let tau = 2.0 / vnorm2;
            col[r] = alpha;
            col[r + 1..].iter_mut().for_each(|x| *x = 0.0);
            qr.a[j * n..(j + 1) * n].copy_from_slice(&col);
            qr.reflectors.push((v, tau));
            accepted.push(j);
        }
        if collinear.is_empty() {
            Ok(qr)
        } else {
            collinear.sort_unstable();
            collinear.dedup();
            Err(collinear)
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.n + i]
    }

    /// Upper-triangular inverse of R.
    #[allow(clippy::needless_range_loop)]
    fn r_inverse(&self) -> Vec<Vec<f64>> {
        let p = self.p;
        let mut inv = vec![vec![0.0; p]; p];
        for j in 0..p {
            inv[j][j] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let s: f64 = (i + 1..=j).map(|k| self.r(i, k) * inv[k][j]).sum();
                inv[i][j] = -s / self.r(i, i);
            }
        }
        inv
    }
}

/// Least-squares fit of `response` on `rows` (n × p, include an intercept
/// column yourself). `columns` names the p columns for reporting.
pub fn fit_ols(columns: &[String], rows: &[Vec<f64>], response: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    let p = columns.len();
    if response.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("design and response dimensions disagree".into()));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "need more rows than columns ({n} rows, {p} columns)"
        )));
    }
    let qr = Qr::factor(rows, p).map_err(|idx| Error::RankDeficient {
        columns: idx.into_iter().map(|i| columns[i].clone()).collect(),
    })?;

    let mut qty = response.to_vec();
    for (k, h) in qr.reflectors.iter().enumerate() {
        qr.apply(h, &mut qty, k);
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| qr.r(i, k) * beta[k]).sum();
        beta[i] = (qty[i] - s) / qr.r(i, i);
    }

    let residuals: Vec<f64> = rows
        .iter()
        .zip(response)
        .map(|(x, y)| y - x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let inv = qr.r_inverse();
    let std_errors: Vec<f64> = (0..p)
        .map(|i| (sigma2 * inv[i].iter().map(|x| x * x).sum::<f64>()).sqrt())
        .collect();
    let t_values: Vec<f64> = beta
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| {
            if se > 0.0 {
                b / se
            } else if b == 0.0 {
                0.0
            } else {
                b.signum() * f64::INFINITY
            }
        })
        .collect();
    let p_values = t_values.iter().map(|&t| t_two_sided_p(t, df as f64)).collect();
    let mean = response.iter().sum::<f64>() / n as f64;
    let tss: f64 = response.iter().map(|y| (y - mean).powi(2)).sum();

    Ok(OlsFit {
        columns: columns.to_vec(),
        coefficients: beta,
        std_errors,
        t_values,
        p_values,
        n_used: n,
        n_dropped: 0,
        df,
        rss,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

/// Fit a [`Design`], carrying its dropped-row count into the result.
pub fn fit_design(design: &Design) -> Result<OlsFit> {
    let mut fit = fit_ols(&design.columns, &design.rows, &design.response)?;
    fit.n_dropped = design.dropped.len();
    Ok(fit)
}

impl OlsFit {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("term,coef,std_err,t,p\n");
        for i in 0..self.columns.len() {
            writeln!(
                s,
                "{},{},{},{},{}",
                self.columns[i], self.coefficients[i], self.std_errors[i], self.t_values[i], self.p_values[i]
            )
            .unwrap();
        }
        s
    }

    /// Aligned text table with fit statistics underneath.
    pub fn render_table(&self) -> String {
        let width = self.columns.iter().map(String::len).max().unwrap_or(0).max(4);
        let mut s = format!(
            "{:<width$} {:>12} {:>12} {:>10} {:>8}\n",
            "", "Coef.", "Std. Err.", "t", "P>|t|"
        );
        for i in 0..self.columns.len() {
            writeln!(
                s,
                "{:<width$} {:>12.4} {:>12.4} {:>10.2} {:>8.3}",
                self.columns[i], self.coefficients[i], self.std_errors[i], self.t_values[i], self.p_values[i]
            )
            .unwrap();
        }
        writeln!(
            s,
            "\nn = {}  dropped = {}  df = {}  R² = {:.4}",
            self.n_used, self.n_dropped, self.df, self.r_squared
        )
        .unwrap();
        s
    }
}
