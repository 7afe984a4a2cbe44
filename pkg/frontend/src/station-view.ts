/**
 * Read-only station view data: registrations and transactions for one
 * station, straight from the API.
 */

import { ApiClient, RegistrationRow, StationRow, TransactionRow } from "./api.js";

export interface StationViewData {
  station: StationRow | null;
  registrations: RegistrationRow[];
  transactions: TransactionRow[];
}

export async function loadStationView(
  client: ApiClient,
  stationId: string,
): Promise<StationViewData> {
  const [stations, registrations, transactions] = await Promise.all([
    client.stations(),
    client.stationRegistrations(stationId),
    client.stationTransactions(stationId),
  ]);
  return {
    station: stations.find((s) => s.id === stationId) ?? null,
    registrations,
    transactions,
  };
}

export function revenueOf(transactions: TransactionRow[]): string {
  // API totals are decimal strings with 2 fraction digits; summing in
  // cents keeps the arithmetic exact.
  let cents = 0;
  for (const row of transactions) {
    cents += Math.round(Number(row.total) * 100);
  }
  return (cents / 100).toFixed(2);
}
