/** Pure session state: the query trail, result marking, and mark payloads.
 *
 * The breadcrumb is append-only within a session; navigating back re-issues
 * an earlier query but never erases the trail. Baskets hold named groups of
 * figures (a captured result set) plus the subset the user marked useful.
 */

export type QueryRef =
  | { kind: "id"; id: string }
  | { kind: "upload"; label: string; imageB64: string }
  | { kind: "keyword"; keyword: string };

export interface BasketGroup {
  figures: string[];
  marked: Set<string>;
}

export interface SessionState {
  k: number;
  snapshotVersion: number | null;
  current: QueryRef | null;
  breadcrumb: QueryRef[];
  baskets: Map<string, BasketGroup>;
}

export const K_MIN = 1;
export const K_MAX = 50;
export const K_DEFAULT = 9;

export function createSession(k: number = K_DEFAULT): SessionState {
  return {
    k: clampK(k),
    snapshotVersion: null,
    current: null,
    breadcrumb: [],
    baskets: new Map(),
  };
}

export function clampK(k: number): number {
  return Math.min(K_MAX, Math.max(K_MIN, Math.round(k)));
}

export function setK(state: SessionState, k: number): SessionState {
  return { ...state, k: clampK(k) };
}

/** Move to a new query; the previous query is pushed onto the breadcrumb. */
export function navigateTo(state: SessionState, ref: QueryRef): SessionState {
  const breadcrumb = state.current
    ? [...state.breadcrumb, state.current]
    : [...state.breadcrumb];
  return { ...state, current: ref, breadcrumb };
}

/** Return to the breadcrumb entry at `index`; the trail stays append-only,
 * so the abandoned present is pushed rather than dropped. */
export function jumpBack(state: SessionState, index: number): SessionState {
  if (index < 0 || index >= state.breadcrumb.length) {
    return state;
  }
  const target = state.breadcrumb[index];
  return navigateTo(state, target);
}

export function noteSnapshot(state: SessionState, version: number): SessionState {
  return { ...state, snapshotVersion: version };
}

export function snapshotChanged(state: SessionState, version: number): boolean {
  return state.snapshotVersion !== null && state.snapshotVersion !== version;
}

// -- baskets ----------------------------------------------------------------

export function addGroup(state: SessionState, name: string,
                         figureIds: string[]): SessionState {
  const baskets = new Map(state.baskets);
  baskets.set(name, { figures: [...figureIds], marked: new Set() });
  return { ...state, baskets };
}

export function toggleMark(state: SessionState, group: string,
                           figureId: string): SessionState {
  const existing = state.baskets.get(group);
  if (!existing || !existing.figures.includes(figureId)) {
    return state;
  }
  const marked = new Set(existing.marked);
  if (marked.has(figureId)) {
    marked.delete(figureId);
  } else {
    marked.add(figureId);
  }
  const baskets = new Map(state.baskets);
  baskets.set(group, { figures: existing.figures, marked });
  return { ...state, baskets };
}

export function markAll(state: SessionState, group: string): SessionState {
  const existing = state.baskets.get(group);
  if (!existing) {
    return state;
  }
  const baskets = new Map(state.baskets);
  baskets.set(group, {
    figures: existing.figures,
    marked: new Set(existing.figures),
  });
  return { ...state, baskets };
}

export function hasAnyMarks(state: SessionState): boolean {
  for (const group of state.baskets.values()) {
    if (group.marked.size > 0) {
      return true;
    }
  }
  return false;
}

/** One evaluator row per group: this session is a single evaluator. */
export function marksPayload(state: SessionState): { name: string; marks: boolean[][] }[] {
  const groups: { name: string; marks: boolean[][] }[] = [];
  for (const [name, group] of state.baskets) {
    if (group.figures.length === 0) {
      continue;
    }
    groups.push({
      name,
      marks: [group.figures.map((f) => group.marked.has(f))],
    });
  }
  return groups;
}
