// SSE subscription with automatic reconnect-and-replay. On stream loss the
// client reconnects with the last seen step so no event is missed; on an
// ordering gap it asks the owner to resync from a snapshot.

import type { StreamEvent } from "./types.js";

export interface SubscriptionHandlers {
  onEvent: (event: StreamEvent) => void;
  onDesync: () => void; // caller should refetch a snapshot and resubscribe
  onConnectionChange?: (connected: boolean) => void;
}

/** Parse one SSE `data:` payload into a typed event, or null if malformed. */
export function parseEventData(data: string): StreamEvent | null {
  try {
    const obj = JSON.parse(data);
    if (typeof obj.step !== "number" || typeof obj.index !== "number") return null;
    return obj as StreamEvent;
  } catch {
    return null;
  }
}

export class EventSubscription {
  private source: EventSource | null = null;
  private lastStep: number;
  private closed = false;

  constructor(
    private urlFor: (after: number) => string,
    startAfter: number,
    private handlers: SubscriptionHandlers
  ) {
    this.lastStep = startAfter;
    this.open();
  }

  private open(): void {
    if (this.closed) return;
    this.source = new EventSource(this.urlFor(this.lastStep));
    this.handlers.onConnectionChange?.(true);
    const deliver = (raw: MessageEvent) => {
      const event = parseEventData(raw.data);
      if (event === null) return;
      if (event.step <= this.lastStep) return; // replay overlap
      if (event.step !== this.lastStep + 1) {
        this.close();
        this.handlers.onDesync();
        return;
      }
      this.lastStep = event.step;
      this.handlers.onEvent(event);
    };
    this.source.addEventListener("step", deliver);
    this.source.addEventListener("intervention", deliver);
    this.source.onerror = () => {
      this.handlers.onConnectionChange?.(false);
      this.source?.close();
      // reconnect with replay from the last seen step
      if (!this.closed) setTimeout(() => this.open(), 1000);
    };
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
  }
}
