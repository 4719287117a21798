"""Default microservices: GPS clustering, proximity detection, questionnaires, users and the real-time store."""

from dhlink.services.geo import (
    DEFAULT_EPS_M,
    DEFAULT_MIN_PTS,
    EARTH_RADIUS_M,
    GeoIndex,
    GpsCluster,
    GpsPoint,
    dbscan_labels,
    geohash_encode,
    gps_cluster,
    haversine_m,
)
from dhlink.services.proximity import (
    DEFAULT_DIST_M,
    DEFAULT_SLACK_S,
    DEFAULT_WINDOW_DAYS,
    ProximityAlert,
    ProximityService,
    detect_proximity_backtrace,
    detect_proximity_incremental,
    in_proximity,
    purge_expired,
)
from dhlink.services.questionnaire import (
    Question,
    QuestionnaireDef,
    QuestionnaireResponse,
    QuestionnaireService,
)
from dhlink.services.store import Change, RealtimeStore, Watcher, WatcherOverflow
from dhlink.services.users import Session, UserRecord, UserService, deid_token

__all__ = [
    "DEFAULT_DIST_M", "DEFAULT_EPS_M", "DEFAULT_MIN_PTS", "DEFAULT_SLACK_S", "DEFAULT_WINDOW_DAYS",
    "EARTH_RADIUS_M", "Change", "GeoIndex", "GpsCluster", "GpsPoint", "ProximityAlert", "ProximityService",
    "Question", "QuestionnaireDef", "QuestionnaireResponse", "QuestionnaireService", "RealtimeStore",
    "Session", "UserRecord", "UserService", "Watcher", "WatcherOverflow", "dbscan_labels", "deid_token",
    "detect_proximity_backtrace", "detect_proximity_incremental", "geohash_encode", "gps_cluster",
    "haversine_m", "in_proximity", "purge_expired",
]
