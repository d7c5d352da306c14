# CFR mediation
