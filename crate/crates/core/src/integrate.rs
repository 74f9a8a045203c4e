//! Embedded adaptive Runge-Kutta integration with dense output.
//!
//! Dormand-Prince 8(5,3): 8th-order steps, a 5th/3rd-order error estimate
//! pair, and a 7th-order continuous extension built from three extra stages
//! per accepted step (coefficients from Hairer, Norsett & Wanner II).
//! Dense output is stored for every accepted step, so a solution can be
//! queried at arbitrary epochs inside its span after the fact.

use crate::error::{Error, Result};
use nalgebra::SVector;

/// Integrator options. `rtol`/`atol` follow the usual mixed error norm.
#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub h0: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    /// Store dense-output coefficients per step (three extra stages each).
    pub dense: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-12,
            atol: 1e-12,
            h0: None,
            h_max: None,
            max_steps: 10_000_000,
            dense: true,
        }
    }
}

impl Options {
    pub fn tol(tol: f64) -> Self {
        Options {
            rtol: tol,
            atol: tol,
            ..Options::default()
        }
    }

    pub fn no_dense(mut self) -> Self {
        self.dense = false;
        self
    }
}

/// One accepted step's continuous extension.
#[derive(Debug, Clone)]
struct DenseStep<const N: usize> {
    t: f64,
    h: f64,
    cont: [SVector<f64, N>; 8],
}

impl<const N: usize> DenseStep<N> {
    fn eval(&self, t: f64) -> SVector<f64, N> {
        let s = (t - self.t) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        let conpar = c[4] + (c[5] + (c[6] + c[7] * s) * s1) * s;
        c[0] + (c[1] + (c[2] + (c[3] + conpar * s1) * s) * s1) * s
    }
}

/// Dense solution over `[t0, tf]` (or `[tf, t0]` for backward integration).
/// Immutable after construction and shareable across threads.
#[derive(Debug, Clone)]
pub struct DenseOutput<const N: usize> {
    t0: f64,
    tf: f64,
    steps: Vec<DenseStep<N>>,
    y0: SVector<f64, N>,
    y_end: SVector<f64, N>,
}

impl<const N: usize> DenseOutput<N> {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.tf {
            (self.t0, self.tf)
        } else {
            (self.tf, self.t0)
        };
        t >= lo - 1e-12 && t <= hi + 1e-12
    }

    /// State at an arbitrary epoch inside the span.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        if self.steps.is_empty() {
            return self.y0;
        }
        if (t - self.tf) * (self.tf - self.t0).signum() >= 0.0 {
            if (t - self.tf).abs() < 1e-12 {
                return self.y_end;
            }
        }
        let forward = self.tf >= self.t0;
        // binary search for the step containing t
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            let start = self.steps[mid].t;
            if (forward && start <= t) || (!forward && start >= t) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        self.steps[lo].eval(t)
    }
}

/// Result of an integration run.
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub t_end: f64,
    pub y_end: SVector<f64, N>,
    pub dense: Option<DenseOutput<N>>,
    pub n_steps: usize,
    pub n_evals: usize,
    pub n_rejected: usize,
}

// Dormand-Prince 8(5,3) tableau (Hairer's DOP853).
const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;
const A141: f64 = 5.61675022830479523392909219681E-2;
const A147: f64 = 2.53500210216624811088794765333E-1;
const A148: f64 = -2.46239037470802489917441475441E-1;
const A149: f64 = -1.24191423263816360469010140626E-1;
const A1410: f64 = 1.5329179827876569731206322685E-1;
const A1411: f64 = 8.20105229563468988491666602057E-3;
const A1412: f64 = 7.56789766054569976138603589584E-3;
const A1413: f64 = -8.298E-3;
const A151: f64 = 3.18346481635021405060768473261E-2;
const A156: f64 = 2.83009096723667755288322961402E-2;
const A157: f64 = 5.35419883074385676223797384372E-2;
const A158: f64 = -5.49237485713909884646569340306E-2;
const A1511: f64 = -1.08347328697249322858509316994E-4;
const A1512: f64 = 3.82571090835658412954920192323E-4;
const A1513: f64 = -3.40465008687404560802977114492E-4;
const A1514: f64 = 1.41312443674632500278074618366E-1;
const A161: f64 = -4.28896301583791923408573538692E-1;
const A166: f64 = -4.69762141536116384314449447206E0;
const A167: f64 = 7.68342119606259904184240953878E0;
const A168: f64 = 4.06898981839711007970213554331E0;
const A169: f64 = 3.56727187455281109270669543021E-1;
const A1613: f64 = -1.39902416515901462129418009734E-3;
const A1614: f64 = 2.9475147891527723389556272149E0;
const A1615: f64 = -9.15095847217987001081870187138E0;
const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;
const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;
const C14: f64 = 0.1E+00;
const C15: f64 = 0.2E+00;
const C16: f64 = 0.777777777777777777777777777778E+00;
const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;
const D41: f64 = -0.84289382761090128651353491142E+01;
const D46: f64 = 0.56671495351937776962531783590E+00;
const D47: f64 = -0.30689499459498916912797304727E+01;
const D48: f64 = 0.23846676565120698287728149680E+01;
const D49: f64 = 0.21170345824450282767155149946E+01;
const D410: f64 = -0.87139158377797299206789907490E+00;
const D411: f64 = 0.22404374302607882758541771650E+01;
const D412: f64 = 0.63157877876946881815570249290E+00;
const D413: f64 = -0.88990336451333310820698117400E-01;
const D414: f64 = 0.18148505520854727256656404962E+02;
const D415: f64 = -0.91946323924783554000451984436E+01;
const D416: f64 = -0.44360363875948939664310572000E+01;
const D51: f64 = 0.10427508642579134603413151009E+02;
const D56: f64 = 0.24228349177525818288430175319E+03;
const D57: f64 = 0.16520045171727028198505394887E+03;
const D58: f64 = -0.37454675472269020279518312152E+03;
const D59: f64 = -0.22113666853125306036270938578E+02;
const D510: f64 = 0.77334326684722638389603898808E+01;
const D511: f64 = -0.30674084731089398182061213626E+02;
const D512: f64 = -0.93321305264302278729567221706E+01;
const D513: f64 = 0.15697238121770843886131091075E+02;
const D514: f64 = -0.31139403219565177677282850411E+02;
const D515: f64 = -0.93529243588444783865713862664E+01;
const D516: f64 = 0.35816841486394083752465898540E+02;
const D61: f64 = 0.19985053242002433820987653617E+02;
const D66: f64 = -0.38703730874935176555105901742E+03;
const D67: f64 = -0.18917813819516756882830838328E+03;
const D68: f64 = 0.52780815920542364900561016686E+03;
const D69: f64 = -0.11573902539959630126141871134E+02;
const D610: f64 = 0.68812326946963000169666922661E+01;
const D611: f64 = -0.10006050966910838403183860980E+01;
const D612: f64 = 0.77771377980534432092869265740E+00;
const D613: f64 = -0.27782057523535084065932004339E+01;
const D614: f64 = -0.60196695231264120758267380846E+02;
const D615: f64 = 0.84320405506677161018159903784E+02;
const D616: f64 = 0.11992291136182789328035130030E+02;
const D71: f64 = -0.25693933462703749003312586129E+02;
const D76: f64 = -0.15418974869023643374053993627E+03;
const D77: f64 = -0.23152937917604549567536039109E+03;
const D78: f64 = 0.35763911791061412378285349910E+03;
const D79: f64 = 0.93405324183624310003907691704E+02;
const D710: f64 = -0.37458323136451633156875139351E+02;
const D711: f64 = 0.10409964950896230045147246184E+03;
const D712: f64 = 0.29840293426660503123344363579E+02;
const D713: f64 = -0.43533456590011143754432175058E+02;
const D714: f64 = 0.96324553959188282948394950600E+02;
const D715: f64 = -0.39177261675615439165231486172E+02;
const D716: f64 = -0.14972683625798562581422125276E+03;

struct Stepper<'a, const N: usize, F>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    f: &'a F,
    t: f64,
    y: SVector<f64, N>,
    k1: SVector<f64, N>,
    h: f64,
    dir: f64,
    opts: Options,
    n_evals: usize,
    n_steps: usize,
    n_rejected: usize,
    facold: f64,
}

struct StepOut<const N: usize> {
    t_old: f64,
    h: f64,
    cont: Option<[SVector<f64, N>; 8]>,
}

impl<'a, const N: usize, F> Stepper<'a, N, F>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    fn new(f: &'a F, t0: f64, y0: SVector<f64, N>, tf: f64, opts: Options) -> Self {
        let dir = if tf >= t0 { 1.0 } else { -1.0 };
        let k1 = f(t0, &y0);
        let h = opts.h0.map(|h| h.abs() * dir).unwrap_or_else(|| {
            initial_step(f, t0, &y0, &k1, dir, (tf - t0).abs(), opts.rtol, opts.atol)
        });
        Stepper {
            f,
            t: t0,
            y: y0,
            k1,
            h,
            dir,
            opts,
            n_evals: 1,
            n_steps: 0,
            n_rejected: 0,
            facold: 1e-4,
        }
    }

    /// One accepted step toward `tf`; h is clipped to land exactly on `tf`.
    fn step(&mut self, tf: f64) -> Result<StepOut<N>> {
        let f = self.f;
        loop {
            if self.n_steps >= self.opts.max_steps {
                return Err(Error::Integration(format!(
                    "max step count {} exceeded at t = {}",
                    self.opts.max_steps, self.t
                )));
            }
            if self.h.abs() < 1e3 * f64::EPSILON * self.t.abs().max(1.0) {
                return Err(Error::Integration(format!(
                    "step size underflow at t = {} (h = {:.3e})",
                    self.t, self.h
                )));
            }
            let mut h = self.h;
            let mut last = false;
            if (self.t + 1.01 * h - tf) * self.dir > 0.0 {
                h = tf - self.t;
                last = true;
            }
            if let Some(hm) = self.opts.h_max {
                if h.abs() > hm {
                    h = hm * self.dir;
                    last = false;
                }
            }

            let t = self.t;
            let y = &self.y;
            let k1 = self.k1;
            let k2 = f(t + C2 * h, &(y + k1 * (A21 * h)));
            let k3 = f(t + C3 * h, &(y + k1 * (A31 * h) + k2 * (A32 * h)));
            let k4 = f(t + C4 * h, &(y + k1 * (A41 * h) + k3 * (A43 * h)));
            let k5 = f(
                t + C5 * h,
                &(y + k1 * (A51 * h) + k3 * (A53 * h) + k4 * (A54 * h)),
            );
            let k6 = f(
                t + C6 * h,
                &(y + k1 * (A61 * h) + k4 * (A64 * h) + k5 * (A65 * h)),
            );
            let k7 = f(
                t + C7 * h,
                &(y + k1 * (A71 * h) + k4 * (A74 * h) + k5 * (A75 * h) + k6 * (A76 * h)),
            );
            let k8 = f(
                t + C8 * h,
                &(y + k1 * (A81 * h)
                    + k4 * (A84 * h)
                    + k5 * (A85 * h)
                    + k6 * (A86 * h)
                    + k7 * (A87 * h)),
            );
            let k9 = f(
                t + C9 * h,
                &(y + k1 * (A91 * h)
                    + k4 * (A94 * h)
                    + k5 * (A95 * h)
                    + k6 * (A96 * h)
                    + k7 * (A97 * h)
                    + k8 * (A98 * h)),
            );
            let k10 = f(
                t + C10 * h,
                &(y + k1 * (A101 * h)
                    + k4 * (A104 * h)
                    + k5 * (A105 * h)
                    + k6 * (A106 * h)
                    + k7 * (A107 * h)
                    + k8 * (A108 * h)
                    + k9 * (A109 * h)),
            );
            let k11 = f(
                t + C11 * h,
                &(y + k1 * (A111 * h)
                    + k4 * (A114 * h)
                    + k5 * (A115 * h)
                    + k6 * (A116 * h)
                    + k7 * (A117 * h)
                    + k8 * (A118 * h)
                    + k9 * (A119 * h)
                    + k10 * (A1110 * h)),
            );
            let t_new = t + h;
            let k12 = f(
                t_new,
                &(y + k1 * (A121 * h)
                    + k4 * (A124 * h)
                    + k5 * (A125 * h)
                    + k6 * (A126 * h)
                    + k7 * (A127 * h)
                    + k8 * (A128 * h)
                    + k9 * (A129 * h)
                    + k10 * (A1210 * h)
                    + k11 * (A1211 * h)),
            );
            self.n_evals += 11;

            let ksum = k1 * B1
                + k6 * B6
                + k7 * B7
                + k8 * B8
                + k9 * B9
                + k10 * B10
                + k11 * B11
                + k12 * B12;
            let y_new = y + ksum * h;

            // 5th/3rd order error pair
            let mut err5 = 0.0;
            let mut err3 = 0.0;
            for i in 0..N {
                let sk = self.opts.atol + self.opts.rtol * y[i].abs().max(y_new[i].abs());
                let e3 = ksum[i] - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
                err3 += (e3 / sk) * (e3 / sk);
                let e5 = ER1 * k1[i]
                    + ER6 * k6[i]
                    + ER7 * k7[i]
                    + ER8 * k8[i]
                    + ER9 * k9[i]
                    + ER10 * k10[i]
                    + ER11 * k11[i]
                    + ER12 * k12[i];
                err5 += (e5 / sk) * (e5 / sk);
            }
            let mut deno = err5 + 0.01 * err3;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h.abs() * err5 * (1.0 / (deno * N as f64)).sqrt();

            const SAFE: f64 = 0.9;
            const FAC1: f64 = 0.333;
            const FAC2: f64 = 6.0;
            let fac11 = err.powf(1.0 / 8.0);
            let fac = (fac11 / SAFE).clamp(1.0 / FAC2, 1.0 / FAC1);
            let h_new = h / fac;

            if err <= 1.0 {
                // accepted
                self.facold = err.max(1e-4);
                let k13 = f(t_new, &y_new);
                self.n_evals += 1;
                self.n_steps += 1;

                let cont = if self.opts.dense {
                    let ydiff = y_new - y;
                    let bspl = k1 * h - ydiff;
                    let c0 = *y;
                    let c1 = ydiff;
                    let c2c = bspl;
                    let c3c = ydiff - k13 * h - bspl;
                    let mut c4 = k1 * D41
                        + k6 * D46
                        + k7 * D47
                        + k8 * D48
                        + k9 * D49
                        + k10 * D410
                        + k11 * D411
                        + k12 * D412;
                    let mut c5 = k1 * D51
                        + k6 * D56
                        + k7 * D57
                        + k8 * D58
                        + k9 * D59
                        + k10 * D510
                        + k11 * D511
                        + k12 * D512;
                    let mut c6 = k1 * D61
                        + k6 * D66
                        + k7 * D67
                        + k8 * D68
                        + k9 * D69
                        + k10 * D610
                        + k11 * D611
                        + k12 * D612;
                    let mut c7 = k1 * D71
                        + k6 * D76
                        + k7 * D77
                        + k8 * D78
                        + k9 * D79
                        + k10 * D710
                        + k11 * D711
                        + k12 * D712;
                    // three extra stages for the order-7 interpolant
                    let k14 = f(
                        t + C14 * h,
                        &(y + (k1 * A141
                            + k7 * A147
                            + k8 * A148
                            + k9 * A149
                            + k10 * A1410
                            + k11 * A1411
                            + k12 * A1412
                            + k13 * A1413)
                            * h),
                    );
                    let k15 = f(
                        t + C15 * h,
                        &(y + (k1 * A151
                            + k6 * A156
                            + k7 * A157
                            + k8 * A158
                            + k11 * A1511
                            + k12 * A1512
                            + k13 * A1513
                            + k14 * A1514)
                            * h),
                    );
                    let k16 = f(
                        t + C16 * h,
                        &(y + (k1 * A161
                            + k6 * A166
                            + k7 * A167
                            + k8 * A168
                            + k9 * A169
                            + k13 * A1613
                            + k14 * A1614
                            + k15 * A1615)
                            * h),
                    );
                    self.n_evals += 3;
                    c4 = (c4 + k13 * D413 + k14 * D414 + k15 * D415 + k16 * D416) * h;
                    c5 = (c5 + k13 * D513 + k14 * D514 + k15 * D515 + k16 * D516) * h;
                    c6 = (c6 + k13 * D613 + k14 * D614 + k15 * D615 + k16 * D616) * h;
                    c7 = (c7 + k13 * D713 + k14 * D714 + k15 * D715 + k16 * D716) * h;
                    Some([c0, c1, c2c, c3c, c4, c5, c6, c7])
                } else {
                    None
                };

                let t_old = self.t;
                self.t = t_new;
                self.y = y_new;
                self.k1 = k13;
                if !last {
                    self.h = h_new;
                }
                return Ok(StepOut { t_old, h, cont });
            }

            // rejected
            self.n_rejected += 1;
            self.h = h / (fac11 / SAFE).min(1.0 / FAC1);
        }
    }
}

/// Hairer's automatic initial step size.
fn initial_step<const N: usize, F>(
    f: &F,
    t0: f64,
    y0: &SVector<f64, N>,
    k1: &SVector<f64, N>,
    dir: f64,
    span: f64,
    rtol: f64,
    atol: f64,
) -> f64
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..N {
        let sk = atol + rtol * y0[i].abs();
        dnf += (k1[i] / sk) * (k1[i] / sk);
        dny += (y0[i] / sk) * (y0[i] / sk);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(span.max(1e-12)) * dir;
    let y1 = y0 + k1 * h;
    let k2 = f(t0 + h, &y1);
    let mut der2 = 0.0;
    for i in 0..N {
        let sk = atol + rtol * y0[i].abs();
        der2 += ((k2[i] - k1[i]) / sk) * ((k2[i] - k1[i]) / sk);
    }
    der2 = der2.sqrt() / h.abs();
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h.abs() * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(1.0 / 8.0)
    };
    (100.0 * h.abs()).min(h1).min(span.max(1e-12)) * dir
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `tf` (either direction).
pub fn solve<const N: usize, F>(
    f: F,
    t0: f64,
    y0: SVector<f64, N>,
    tf: f64,
    opts: &Options,
) -> Result<Solution<N>>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    if t0 == tf {
        return Ok(Solution {
            t_end: tf,
            y_end: y0,
            dense: opts.dense.then(|| DenseOutput {
                t0,
                tf,
                steps: Vec::new(),
                y0,
                y_end: y0,
            }),
            n_steps: 0,
            n_evals: 0,
            n_rejected: 0,
        });
    }
    let mut st = Stepper::new(&f, t0, y0, tf, *opts);
    let mut steps = Vec::new();
    while (st.t - tf) * st.dir < -1e-14 * tf.abs().max(1.0) {
        let out = st.step(tf)?;
        if let Some(cont) = out.cont {
            steps.push(DenseStep {
                t: out.t_old,
                h: out.h,
                cont,
            });
        }
    }
    Ok(Solution {
        t_end: tf,
        y_end: st.y,
        dense: opts.dense.then_some(DenseOutput {
            t0,
            tf,
            steps,
            y0,
            y_end: st.y,
        }),
        n_steps: st.n_steps,
        n_evals: st.n_evals,
        n_rejected: st.n_rejected,
    })
}

/// Event located while integrating with [`solve_to_event`].
#[derive(Debug, Clone)]
pub struct EventHit<const N: usize> {
    pub t: f64,
    pub y: SVector<f64, N>,
}

/// Integrate until `g(t, y)` crosses zero in the requested direction
/// (+1 rising, -1 falling, 0 either), or until `tf`. The crossing is
/// refined on the dense interpolant by bisection. `t_min` suppresses
/// crossings before that epoch (useful to skip the initial condition
/// sitting exactly on the event surface).
pub fn solve_to_event<const N: usize, F, G>(
    f: F,
    t0: f64,
    y0: SVector<f64, N>,
    tf: f64,
    opts: &Options,
    g: G,
    direction: i8,
    t_min: f64,
) -> Result<(Option<EventHit<N>>, Solution<N>)>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    G: Fn(f64, &SVector<f64, N>) -> f64,
{
    let mut local = *opts;
    local.dense = true;
    let mut st = Stepper::new(&f, t0, y0, tf, local);
    let mut steps = Vec::new();
    let mut g_prev = g(t0, &y0);
    let mut hit = None;
    while (st.t - tf) * st.dir < -1e-14 * tf.abs().max(1.0) {
        let out = st.step(tf)?;
        let cont = out.cont.expect("dense forced on");
        let step = DenseStep {
            t: out.t_old,
            h: out.h,
            cont,
        };
        let g_new = g(st.t, &st.y);
        let crossed = g_prev * g_new <= 0.0
            && (g_prev != 0.0 || g_new != 0.0)
            && (direction == 0
                || (direction > 0 && g_new >= g_prev)
                || (direction < 0 && g_new <= g_prev));
        if crossed && (st.t - t_min) * st.dir > 0.0 && (out.t_old - t_min) * st.dir >= 0.0 {
            // bisect inside the step on the dense interpolant
            let mut a = out.t_old;
            let mut b = st.t;
            let mut ga = g(a, &step.eval(a));
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let gm = g(m, &step.eval(m));
                if ga * gm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    ga = gm;
                }
                if (b - a).abs() < 1e-14 * b.abs().max(1.0) {
                    break;
                }
            }
            let t_ev = 0.5 * (a + b);
            hit = Some(EventHit {
                t: t_ev,
                y: step.eval(t_ev),
            });
            steps.push(step);
            break;
        }
        g_prev = g_new;
        steps.push(step);
    }
    let t_end = st.t;
    let y_end = st.y;
    Ok((
        hit,
        Solution {
            t_end,
            y_end,
            dense: Some(DenseOutput {
                t0,
                tf: t_end,
                steps,
                y0,
                y_end,
            }),
            n_steps: st.n_steps,
            n_evals: st.n_evals,
            n_rejected: st.n_rejected,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn harmonic(_t: f64, y: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(y[1], -y[0])
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let y0 = Vector2::new(1.0, 0.0);
        let sol = solve(harmonic, 0.0, y0, 10.0, &Options::tol(1e-12)).unwrap();
        assert!((sol.y_end[0] - 10.0f64.cos()).abs() < 1e-11);
        assert!((sol.y_end[1] + 10.0f64.sin()).abs() < 1e-11);
    }

    #[test]
    fn dense_output_matches_analytic() {
        let y0 = Vector2::new(1.0, 0.0);
        let sol = solve(harmonic, 0.0, y0, 10.0, &Options::tol(1e-12)).unwrap();
        let dense = sol.dense.unwrap();
        for i in 0..=100 {
            let t = 10.0 * i as f64 / 100.0;
            let y = dense.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-10, "t={t} err={}", y[0] - t.cos());
        }
    }

    #[test]
    fn zero_length_interval_returns_initial_state() {
        let y0 = Vector2::new(0.3, -0.7);
        let sol = solve(harmonic, 1.5, y0, 1.5, &Options::default()).unwrap();
        assert_eq!(sol.y_end, y0);
        assert_eq!(sol.dense.unwrap().eval(1.5), y0);
    }

    #[test]
    fn backward_integration() {
        let y0 = Vector2::new(1.0, 0.0);
        let fwd = solve(harmonic, 0.0, y0, 5.0, &Options::tol(1e-13)).unwrap();
        let back = solve(harmonic, 5.0, fwd.y_end, 0.0, &Options::tol(1e-13)).unwrap();
        assert!((back.y_end - y0).norm() < 1e-11);
    }

    #[test]
    fn event_detection_hits_zero_crossing() {
        // y = cos(t) crosses zero at pi/2, falling
        let y0 = Vector2::new(1.0, 0.0);
        let (hit, _) = solve_to_event(
            harmonic,
            0.0,
            y0,
            10.0,
            &Options::tol(1e-12),
            |_t, y| y[0],
            -1,
            0.0,
        )
        .unwrap();
        let hit = hit.unwrap();
        assert!((hit.t - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert!(hit.y[0].abs() < 1e-10);
    }
}
