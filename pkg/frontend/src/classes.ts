/** The seven lane marking classes, serialized as integers 0-6 in this order. */

export interface LaneClass {
  id: number;
  name: string;
  color: string;
  /** keyboard shortcut: keys "1".."7" map to ids 0..6 */
  key: string;
}

export const LANE_CLASSES: readonly LaneClass[] = [
  { id: 0, name: "solid-yellow", color: "#d9b320", key: "1" },
  { id: 1, name: "solid-white", color: "#e8e8e2", key: "2" },
  { id: 2, name: "dashed", color: "#4fc3f7", key: "3" },
  { id: 3, name: "double-dashed", color: "#29b6f6", key: "4" },
  { id: 4, name: "botts-dots", color: "#ab47bc", key: "5" },
  { id: 5, name: "double-yellow", color: "#ffb300", key: "6" },
  { id: 6, name: "road-edge-unknown", color: "#8d6e63", key: "7" },
] as const;

export function classById(id: number): LaneClass {
  const cls = LANE_CLASSES.find((c) => c.id === id);
  if (!cls) {
    throw new Error(`unknown lane class id ${id}; expected 0..6`);
  }
  return cls;
}

export function classForKey(key: string): LaneClass | null {
  return LANE_CLASSES.find((c) => c.key === key) ?? null;
}
