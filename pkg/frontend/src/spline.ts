/**
 * Natural cubic spline x(y), the same construction the converter CLI uses:
 * points are sorted by y, x values of duplicate y are averaged, interior
 * second derivatives come from the tridiagonal system with zero second
 * derivative at both endpoints, solved by the Thomas algorithm. Keeping the
 * algorithm identical is what makes the preview agree with the converted
 * dataset to well under half a pixel.
 */

export interface Point {
  x: number;
  y: number;
}

export interface LaneCurve {
  knotY: Float64Array;
  knotX: Float64Array;
  secondDeriv: Float64Array;
  yMin: number;
  yMax: number;
}

/** Sort by y and average x over duplicate y values. */
export function canonicalize(points: readonly Point[]): { ys: number[]; xs: number[] } {
  const byY = new Map<number, { sum: number; n: number }>();
  for (const p of points) {
    const cur = byY.get(p.y) ?? { sum: 0, n: 0 };
    cur.sum += p.x;
    cur.n += 1;
    byY.set(p.y, cur);
  }
  const ys = [...byY.keys()].sort((a, b) => a - b);
  if (ys.length < 2) {
    throw new Error("polyline needs at least 2 distinct y values");
  }
  const xs = ys.map((y) => {
    const { sum, n } = byY.get(y)!;
    return sum / n;
  });
  return { ys, xs };
}

export function fitSpline(points: readonly Point[]): LaneCurve {
  const { ys, xs } = canonicalize(points);
  const n = ys.length;
  const m = new Float64Array(n);
  if (n > 2) {
    const h = new Float64Array(n - 1);
    for (let i = 0; i < n - 1; i++) h[i] = ys[i + 1] - ys[i];
    const rhs = new Float64Array(n - 2);
    const diag = new Float64Array(n - 2);
    const lower = new Float64Array(n - 2);
    const upper = new Float64Array(n - 2);
    for (let k = 0; k < n - 2; k++) {
      rhs[k] = 6.0 * ((xs[k + 2] - xs[k + 1]) / h[k + 1] - (xs[k + 1] - xs[k]) / h[k]);
      diag[k] = 2.0 * (h[k] + h[k + 1]);
      lower[k] = h[k];
      upper[k] = h[k + 1];
    }
    const cp = new Float64Array(n - 2);
    const dp = new Float64Array(n - 2);
    cp[0] = upper[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for (let k = 1; k < n - 2; k++) {
      const denom = diag[k] - lower[k] * cp[k - 1];
      cp[k] = upper[k] / denom;
      dp[k] = (rhs[k] - lower[k] * dp[k - 1]) / denom;
    }
    const sol = new Float64Array(n - 2);
    sol[n - 3] = dp[n - 3];
    for (let k = n - 4; k >= 0; k--) {
      sol[k] = dp[k] - cp[k] * sol[k + 1];
    }
    for (let k = 0; k < n - 2; k++) m[k + 1] = sol[k];
  }
  return {
    knotY: Float64Array.from(ys),
    knotX: Float64Array.from(xs),
    secondDeriv: m,
    yMin: ys[0],
    yMax: ys[n - 1],
  };
}

export function evaluate(curve: LaneCurve, y: number): number {
  const ky = curve.knotY;
  const kx = curve.knotX;
  const m = curve.secondDeriv;
  let i = upperBound(ky, y) - 1;
  if (i < 0) i = 0;
  if (i > ky.length - 2) i = ky.length - 2;
  const h = ky[i + 1] - ky[i];
  const a = (ky[i + 1] - y) / h;
  const b = (y - ky[i]) / h;
  return (
    a * kx[i] +
    b * kx[i + 1] +
    ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * (h * h) / 6.0
  );
}

/** index of the first element strictly greater than v */
function upperBound(arr: Float64Array, v: number): number {
  let lo = 0;
  let hi = arr.length;
  while (lo < hi) {
    const mid = (lo + hi) >> 1;
    if (arr[mid] <= v) lo = mid + 1;
    else hi = mid;
  }
  return lo;
}

export const ABSENT = -2;

/**
 * Sample the curve at row anchors: -2 outside the annotated y extent,
 * otherwise x clamped to [0, imageWidth - 1]. Mirrors the converter.
 */
export function sampleAtAnchors(
  curve: LaneCurve,
  hSamples: readonly number[],
  imageWidth: number,
): number[] {
  return hSamples.map((y) => {
    if (y < curve.yMin || y > curve.yMax) return ABSENT;
    const x = evaluate(curve, y);
    return Math.min(Math.max(x, 0), imageWidth - 1);
  });
}
