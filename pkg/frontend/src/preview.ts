/**
 * Live anchor preview: where the lane will land after spline resampling.
 * Anchors outside the annotated extent get no dot, mirroring the -2
 * absent marker in the exported dataset.
 */

import { GridSettings, Lane, hSamples } from "./session.js";
import { ABSENT, fitSpline, sampleAtAnchors } from "./spline.js";

export interface AnchorDot {
  x: number;
  y: number;
}

export function previewAnchors(
  lane: Lane,
  grid: GridSettings,
  imageWidth: number,
): AnchorDot[] {
  const distinctY = new Set(lane.points.map((p) => p.y));
  if (lane.points.length < 2 || distinctY.size < 2) return [];
  const curve = fitSpline(lane.points);
  const anchors = hSamples(grid);
  const xs = sampleAtAnchors(curve, anchors, imageWidth);
  const dots: AnchorDot[] = [];
  xs.forEach((x, i) => {
    if (x !== ABSENT) dots.push({ x, y: anchors[i] });
  });
  return dots;
}
