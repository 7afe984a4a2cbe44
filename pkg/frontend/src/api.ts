/**
 * Typed client for the registration API.
 *
 * The UI never builds registry state itself: every record it renders
 * came out of one of these calls. fetch is injectable for tests.
 */

export const SUBMISSION_FIELDS = [
  "owner_id",
  "owner_name",
  "owner_email",
  "owner_phone",
  "car_id",
  "car_model_name",
  "car_model_year",
  "car_date_purchased",
  "station_id",
  "station_name",
  "station_address",
] as const;

export type SubmissionField = (typeof SUBMISSION_FIELDS)[number];

/** The flat document POSTed to /api/v1/registrations. */
export type RegistrationSubmission = Record<SubmissionField, string | number>;

export interface RegistrationTriple {
  station_id: string;
  car_id: string;
  car_owner_id: string;
}

export interface ConflictDetail {
  relation: string;
  key: string;
  reason: string;
}

export interface StationRow {
  id: string;
  name: string;
  address: string;
}

export interface RegistrationRow {
  station_id: string;
  car_id: string;
  car_owner_id: string;
}

export interface TransactionRow {
  id: string;
  station_id: string;
  car_id: string;
  owner_id: string;
  kwh: string;
  price_per_kwh: string;
  total: string;
  timestamp: string;
  outcome: string;
}

export interface CarRow {
  id: string;
  model_name: string;
  model_year: number;
  date_purchased: string;
  owner_id: string;
}

export type SubmitResponse =
  | { kind: "created"; triple: RegistrationTriple }
  | { kind: "conflict"; detail: ConflictDetail }
  | { kind: "invalid"; errors: Partial<Record<SubmissionField, string>> }
  | { kind: "network"; message: string };

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async createRegistration(submission: RegistrationSubmission): Promise<SubmitResponse> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}/api/v1/registrations`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(submission),
      });
    } catch (error) {
      return { kind: "network", message: String(error) };
    }
    if (response.status === 201) {
      return { kind: "created", triple: (await response.json()) as RegistrationTriple };
    }
    if (response.status === 409) {
      return { kind: "conflict", detail: (await response.json()) as ConflictDetail };
    }
    if (response.status === 422) {
      return {
        kind: "invalid",
        errors: (await response.json()) as Partial<Record<SubmissionField, string>>,
      };
    }
    return { kind: "network", message: `unexpected status ${response.status}` };
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new Error(`GET ${path} failed with ${response.status}`);
    }
    return (await response.json()) as T;
  }

  stations(): Promise<StationRow[]> {
    return this.getJson("/api/v1/stations");
  }

  stationRegistrations(stationId: string): Promise<RegistrationRow[]> {
    return this.getJson(`/api/v1/stations/${encodeURIComponent(stationId)}/registrations`);
  }

  stationTransactions(stationId: string): Promise<TransactionRow[]> {
    return this.getJson(`/api/v1/stations/${encodeURIComponent(stationId)}/transactions`);
  }

  ownerCars(ownerId: string): Promise<CarRow[]> {
    return this.getJson(`/api/v1/owners/${encodeURIComponent(ownerId)}/cars`);
  }
}

/**
 * Which form field a 409 conflict points at; null means the conflict
 * concerns the registration triple as a whole (form-level banner).
 */
export function conflictField(relation: string): SubmissionField | null {
  switch (relation) {
    case "owner":
      return "owner_id";
    case "car":
      return "car_id";
    case "station":
      return "station_id";
    default:
      return null;
  }
}
