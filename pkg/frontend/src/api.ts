/** Typed client for the rating-study backend. */

export interface SessionInfo {
  session_id: string;
  rater_id: string;
  total: number;
  done: number;
}

export interface NextItem {
  session_id: string;
  item_id: string;
  position: number;
  total: number;
  done: number;
  reference_url: string;
  candidate_url: string;
}

export interface SessionComplete {
  session_id: string;
  complete: true;
  total: number;
  done: number;
}

export type NextResponse = NextItem | SessionComplete;

export interface RatingAck {
  status: string;
  done: number;
  total: number;
}

export function isComplete(r: NextResponse): r is SessionComplete {
  return (r as SessionComplete).complete === true;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `network failure: ${String(err)}`);
  }
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class StudyApi {
  constructor(private readonly baseUrl: string = '') {}

  openSession(raterId: string): Promise<SessionInfo> {
    return request<SessionInfo>(`${this.baseUrl}/session/${encodeURIComponent(raterId)}`);
  }

  nextItem(sessionId: string): Promise<NextResponse> {
    return request<NextResponse>(`${this.baseUrl}/session/${encodeURIComponent(sessionId)}/next`);
  }

  submitRating(sessionId: string, itemId: string, score: number): Promise<RatingAck> {
    return request<RatingAck>(`${this.baseUrl}/session/${encodeURIComponent(sessionId)}/rating`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ item_id: itemId, score }),
    });
  }
}
