/**
 * Annotation session state: an ordered image list, per-image lanes (points
 * plus class), the grid preview settings, and snapshot-based undo/redo.
 * Invalid gestures are no-ops; every mutating edit pushes one undo step.
 */

import { classById } from "./classes.js";
import { Point } from "./spline.js";

export interface Lane {
  id: number;
  points: Point[];
  classId: number | null;
}

export interface ImageAnnotation {
  image: string;
  width: number;
  height: number;
  lanes: Lane[];
}

export interface GridSettings {
  hStart: number;
  hStop: number;
  hStep: number;
  cells: number;
}

export function hSamples(grid: GridSettings): number[] {
  const out: number[] = [];
  for (let y = grid.hStart; y < grid.hStop; y += grid.hStep) out.push(y);
  return out;
}

const UNDO_LIMIT = 100; // comfortably above the guaranteed 50 steps

interface Snapshot {
  lanes: Lane[];
  activeLane: number | null;
}

export class AnnotationSession {
  images: ImageAnnotation[] = [];
  activeImage = 0;
  activeLane: number | null = null;
  grid: GridSettings = { hStart: 160, hStop: 720, hStep: 10, cells: 100 };
  dirty = false;

  private nextLaneId = 1;
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];

  addImage(image: string, width: number, height: number): void {
    this.images.push({ image, width, height, lanes: [] });
    if (this.images.length === 1) this.activeImage = 0;
  }

  get current(): ImageAnnotation | null {
    return this.images[this.activeImage] ?? null;
  }

  selectImage(index: number): void {
    if (index < 0 || index >= this.images.length) return;
    this.activeImage = index;
    this.activeLane = null;
    this.undoStack = [];
    this.redoStack = [];
  }

  private snapshot(): Snapshot {
    const img = this.current;
    return {
      lanes: img ? img.lanes.map((l) => ({
        id: l.id,
        points: l.points.map((p) => ({ ...p })),
        classId: l.classId,
      })) : [],
      activeLane: this.activeLane,
    };
  }

  private pushUndo(): void {
    this.undoStack.push(this.snapshot());
    if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
    this.redoStack = [];
    this.dirty = true;
  }

  private restore(snap: Snapshot): void {
    const img = this.current;
    if (!img) return;
    img.lanes = snap.lanes.map((l) => ({
      id: l.id,
      points: l.points.map((p) => ({ ...p })),
      classId: l.classId,
    }));
    this.activeLane = snap.activeLane;
  }

  undo(): boolean {
    const snap = this.undoStack.pop();
    if (!snap) return false;
    this.redoStack.push(this.snapshot());
    this.restore(snap);
    return true;
  }

  redo(): boolean {
    const snap = this.redoStack.pop();
    if (!snap) return false;
    this.undoStack.push(this.snapshot());
    this.restore(snap);
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  // --- lane editing --------------------------------------------------------

  private clamp(x: number, y: number): Point {
    const img = this.current!;
    return {
      x: Math.min(Math.max(x, 0), img.width - 1),
      y: Math.min(Math.max(y, 0), img.height - 1),
    };
  }

  startLane(): number | null {
    if (!this.current) return null;
    this.pushUndo();
    const lane: Lane = { id: this.nextLaneId++, points: [], classId: null };
    this.current.lanes.push(lane);
    this.activeLane = lane.id;
    return lane.id;
  }

  lane(laneId: number): Lane | null {
    return this.current?.lanes.find((l) => l.id === laneId) ?? null;
  }

  addPoint(x: number, y: number): void {
    const lane = this.activeLane === null ? null : this.lane(this.activeLane);
    if (!lane) return;
    this.pushUndo();
    lane.points.push(this.clamp(x, y));
  }

  movePoint(laneId: number, index: number, x: number, y: number): void {
    const lane = this.lane(laneId);
    if (!lane || index < 0 || index >= lane.points.length) return;
    this.pushUndo();
    lane.points[index] = this.clamp(x, y);
  }

  deletePoint(laneId: number, index: number): void {
    const lane = this.lane(laneId);
    if (!lane || index < 0 || index >= lane.points.length) return;
    this.pushUndo();
    lane.points.splice(index, 1);
  }

  deleteLane(laneId: number): void {
    const img = this.current;
    if (!img) return;
    const at = img.lanes.findIndex((l) => l.id === laneId);
    if (at < 0) return;
    this.pushUndo();
    img.lanes.splice(at, 1);
    if (this.activeLane === laneId) this.activeLane = null;
  }

  assignClass(laneId: number, classId: number): void {
    const lane = this.lane(laneId);
    if (!lane) return;
    classById(classId); // throws on unknown class: rejected, not a no-op
    this.pushUndo();
    lane.classId = classId;
  }

  /** Per-lane problems that block export; empty list means exportable. */
  validateForExport(): string[] {
    const img = this.current;
    if (!img) return ["no image loaded"];
    if (img.lanes.length === 0) return ["nothing to export: no lanes annotated"];
    const problems: string[] = [];
    img.lanes.forEach((lane, i) => {
      const distinctY = new Set(lane.points.map((p) => p.y));
      if (lane.points.length < 2 || distinctY.size < 2) {
        problems.push(`lane ${i + 1}: needs at least 2 points with distinct y`);
      }
      if (lane.classId === null) {
        problems.push(`lane ${i + 1}: no class assigned (keys 1-7)`);
      }
    });
    return problems;
  }
}
