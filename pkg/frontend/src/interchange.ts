/**
 * Interchange JSON is the contract with the converter CLI:
 * { "image": string, "width": int, "height": int,
 *   "lanes": [ { "points": [[x, y], ...], "class": 0..6 }, ... ] }
 * TuSimple export is offered for convenience; the CLI converter stays the
 * canonical path and both use the same spline math.
 */

import { AnnotationSession, ImageAnnotation, hSamples } from "./session.js";
import { ABSENT, fitSpline, sampleAtAnchors } from "./spline.js";

export interface InterchangeLane {
  points: [number, number][];
  class: number;
}

export interface InterchangeDoc {
  image: string;
  width: number;
  height: number;
  lanes: InterchangeLane[];
}

export interface TuSimpleLine {
  lanes: number[][];
  h_samples: number[];
  raw_file: string;
  classes: number[];
}

export function exportInterchange(session: AnnotationSession): InterchangeDoc {
  const problems = session.validateForExport();
  if (problems.length > 0) {
    throw new Error(`export blocked:\n${problems.join("\n")}`);
  }
  const img = session.current!;
  return {
    image: img.image,
    width: img.width,
    height: img.height,
    lanes: img.lanes.map((lane) => ({
      points: lane.points.map((p) => [p.x, p.y] as [number, number]),
      class: lane.classId!,
    })),
  };
}

export function validateInterchange(doc: unknown): string[] {
  const problems: string[] = [];
  const d = doc as Partial<InterchangeDoc>;
  if (typeof d !== "object" || d === null) return ["document is not an object"];
  if (typeof d.image !== "string" || !d.image) problems.push("image: must be a non-empty string");
  if (!Number.isInteger(d.width) || (d.width as number) <= 0) problems.push("width: must be a positive integer");
  if (!Number.isInteger(d.height) || (d.height as number) <= 0) problems.push("height: must be a positive integer");
  if (!Array.isArray(d.lanes)) {
    problems.push("lanes: must be an array");
    return problems;
  }
  d.lanes.forEach((lane, i) => {
    if (!Array.isArray(lane?.points) || lane.points.length < 2) {
      problems.push(`lanes[${i}].points: need at least 2 [x, y] pairs`);
    } else if (!lane.points.every((p: unknown) => Array.isArray(p) && p.length === 2
               && p.every((v) => typeof v === "number" && Number.isFinite(v)))) {
      problems.push(`lanes[${i}].points: every entry must be a finite [x, y] pair`);
    }
    if (!Number.isInteger(lane?.class) || lane.class < 0 || lane.class > 6) {
      problems.push(`lanes[${i}].class: must be an integer in 0..6`);
    }
  });
  return problems;
}

export function importInterchange(doc: unknown): ImageAnnotation {
  const problems = validateInterchange(doc);
  if (problems.length > 0) {
    throw new Error(`invalid interchange document:\n${problems.join("\n")}`);
  }
  const d = doc as InterchangeDoc;
  return {
    image: d.image,
    width: d.width,
    height: d.height,
    lanes: d.lanes.map((lane, i) => ({
      id: i + 1,
      points: lane.points.map(([x, y]) => ({ x, y })),
      classId: lane.class,
    })),
  };
}

/** Round like the converter does: 3 decimals, absent marker untouched. */
function round3(v: number): number {
  return v === ABSENT ? v : Math.round(v * 1000) / 1000;
}

export function exportTusimple(session: AnnotationSession): TuSimpleLine {
  const doc = exportInterchange(session);
  const anchors = hSamples(session.grid);
  const lanes = doc.lanes.map((lane) => {
    const curve = fitSpline(lane.points.map(([x, y]) => ({ x, y })));
    return sampleAtAnchors(curve, anchors, doc.width).map(round3);
  });
  return {
    lanes,
    h_samples: anchors,
    raw_file: doc.image,
    classes: doc.lanes.map((l) => l.class),
  };
}
