/** DOM-free orchestration of the ideation loop: issue queries, keep the
 * breadcrumb, detect snapshot drift, and submit marks. Views subscribe to
 * `onChange` and render whatever is in the controller. */

import { ApiClient } from "./api.js";
import {
  QueryRef, SessionState, addGroup, createSession, hasAnyMarks, jumpBack,
  markAll, marksPayload, navigateTo, noteSnapshot, setK, snapshotChanged,
  toggleMark,
} from "./session.js";
import type { MarksResponse, QueryResponse } from "./types.js";

export class AppController {
  state: SessionState = createSession();
  lastResponse: QueryResponse | null = null;
  lastMarks: MarksResponse | null = null;
  banner: string | null = null;
  staleSnapshot = false;
  onChange: () => void = () => {};

  constructor(public api: ApiClient) {}

  private notify(): void {
    this.onChange();
  }

  private refToRequest(ref: QueryRef) {
    switch (ref.kind) {
      case "id":
        return { id: ref.id, k: this.state.k, exclude_self: true };
      case "upload":
        return { image_pgm_b64: ref.imageB64, k: this.state.k };
      case "keyword":
        return { keyword: ref.keyword, k: this.state.k, k_seed: 4 };
    }
  }

  private async issue(ref: QueryRef): Promise<void> {
    try {
      const response = await this.api.query(this.refToRequest(ref));
      this.lastResponse = response;
      this.staleSnapshot = snapshotChanged(this.state, response.snapshot_version);
      this.state = noteSnapshot(this.state, response.snapshot_version);
      this.banner = response.status === "no_seeds"
        ? "no records match that keyword" : null;
    } catch (err) {
      if ((err as Error).name === "AbortError") {
        return; // a newer query superseded this one
      }
      this.banner = `service error: ${(err as Error).message}`;
    }
    this.notify();
  }

  private async runQuery(ref: QueryRef): Promise<void> {
    this.state = navigateTo(this.state, ref);
    await this.issue(ref);
  }

  async queryById(id: string): Promise<void> {
    await this.runQuery({ kind: "id", id });
  }

  /** Clicking a result makes it the next query; the old one stays on the
   * breadcrumb. */
  async clickResult(id: string): Promise<void> {
    await this.queryById(id);
  }

  async queryUpload(label: string, imageB64: string): Promise<void> {
    await this.runQuery({ kind: "upload", label, imageB64 });
  }

  async queryKeyword(keyword: string): Promise<void> {
    await this.runQuery({ kind: "keyword", keyword });
  }

  async goBack(index: number): Promise<void> {
    const before = this.state;
    this.state = jumpBack(this.state, index);
    if (this.state !== before && this.state.current) {
      await this.issue(this.state.current);
    }
  }

  setK(k: number): void {
    this.state = setK(this.state, k);
    this.notify();
  }

  captureResultsAsGroup(name: string): void {
    if (!this.lastResponse || this.lastResponse.results.length === 0) {
      return;
    }
    this.state = addGroup(this.state, name,
                          this.lastResponse.results.map((r) => r.id));
    this.notify();
  }

  toggleMark(group: string, id: string): void {
    this.state = toggleMark(this.state, group, id);
    this.notify();
  }

  markAll(group: string): void {
    this.state = markAll(this.state, group);
    this.notify();
  }

  canSubmitMarks(): boolean {
    return hasAnyMarks(this.state);
  }

  async submitMarks(): Promise<void> {
    if (!this.canSubmitMarks()) {
      return; // submission is disabled with an empty basket
    }
    try {
      this.lastMarks = await this.api.submitMarks(marksPayload(this.state));
      this.banner = null;
    } catch (err) {
      // marks stay in the session for retry
      this.banner = `marks submission failed: ${(err as Error).message}`;
    }
    this.notify();
  }
}
